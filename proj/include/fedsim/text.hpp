#pragma once

#include <string>
#include <vector>

namespace fedsim {

// Shortest decimal string that parses back to exactly v. Canonical formatting
// for every deterministic text artifact (CSV, config, SVG).
std::string format_double(double v);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

} // namespace fedsim
