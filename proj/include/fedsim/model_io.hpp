#pragma once

#include "fedsim/model.hpp"

#include <string>

namespace fedsim {

// Versioned binary model file: magic "FEDSIM1\n", u32 version, u32 matrix
// count, then per matrix u32 name length, name bytes, u32 rows, u32 cols and
// row-major little-endian f64 values. Bit-exact round trip.
void save_paramset(const ParamSet& params, const std::string& path);
ParamSet load_paramset(const std::string& path);

} // namespace fedsim
