#pragma once

#include "fedsim/metrics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fedsim {

// Per-epoch evaluation snapshots (the last aggregation of each epoch) and the
// best epoch per run; "best" is max macro_f1 when present, else min eval_loss.
struct EpochPoint {
    int epoch = 0;
    int round = 0;
    std::optional<double> eval_loss;
    std::optional<double> accuracy;
    std::optional<double> macro_f1;
    std::optional<double> excess_risk;
};

struct RunSummary {
    std::string name;
    std::vector<EpochPoint> epochs;
    EpochPoint best;
};

RunSummary summarize_run(const std::string& name, const std::vector<MetricsRecord>& records);

// summary.csv: one row per input run, best-epoch metrics.
void write_summary_csv(const std::vector<RunSummary>& runs, const std::string& path);
// plain-text table for stdout
std::string format_summary_table(const std::vector<RunSummary>& runs);

struct CurveSeries {
    std::string label;
    std::vector<double> x; // aggregation round
    std::vector<double> y; // metric value
};

// Minimal deterministic SVG line chart.
void write_curves_svg(const std::vector<CurveSeries>& series, const std::string& y_label,
                      const std::string& path);

// Per-round eval curve from a run log; metric is "eval_loss", "accuracy",
// "macro_f1" or "excess_risk".
CurveSeries eval_curve(const std::string& label, const std::vector<MetricsRecord>& records,
                       const std::string& metric);

} // namespace fedsim
