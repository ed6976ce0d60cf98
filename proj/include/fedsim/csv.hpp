#pragma once

#include "fedsim/metrics.hpp"

#include <string>
#include <vector>

namespace fedsim {

// Fixed metrics.csv schema, in MetricsRecord field order. Absent metrics are
// written as empty cells.
const std::vector<std::string>& metrics_csv_columns();

void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

} // namespace fedsim
