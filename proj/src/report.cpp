#include "fedsim/report.hpp"

#include "fedsim/error.hpp"
#include "fedsim/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fedsim {

RunSummary summarize_run(const std::string& name, const std::vector<MetricsRecord>& records) {
    RunSummary summary;
    summary.name = name;
    for (const auto& r : records) {
        if (r.client_id != "global") {
            continue;
        }
        EpochPoint pt;
        pt.epoch = r.epoch;
        pt.round = r.round;
        pt.eval_loss = r.eval_loss;
        pt.accuracy = r.accuracy;
        pt.macro_f1 = r.macro_f1;
        pt.excess_risk = r.excess_risk;
        if (!summary.epochs.empty() && summary.epochs.back().epoch == pt.epoch) {
            summary.epochs.back() = pt; // keep the last aggregation of the epoch
        } else {
            summary.epochs.push_back(pt);
        }
    }
    if (summary.epochs.empty()) {
        throw DataError("summarize_run: '" + name + "' has no aggregation rows");
    }
    summary.best = summary.epochs.front();
    for (const auto& pt : summary.epochs) {
        const bool better =
            pt.macro_f1 && summary.best.macro_f1
                ? *pt.macro_f1 > *summary.best.macro_f1
                : (pt.eval_loss && summary.best.eval_loss ? *pt.eval_loss < *summary.best.eval_loss
                                                          : false);
        if (better) {
            summary.best = pt;
        }
    }
    return summary;
}

namespace {
std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
} // namespace

void write_summary_csv(const std::vector<RunSummary>& runs, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("write_summary_csv: cannot open '" + path + "'");
    }
    out << "run,best_epoch,best_round,eval_loss,accuracy,macro_f1,excess_risk\n";
    for (const auto& r : runs) {
        out << r.name << ',' << r.best.epoch << ',' << r.best.round << ','
            << opt_cell(r.best.eval_loss) << ',' << opt_cell(r.best.accuracy) << ','
            << opt_cell(r.best.macro_f1) << ',' << opt_cell(r.best.excess_risk) << '\n';
    }
}

std::string format_summary_table(const std::vector<RunSummary>& runs) {
    std::ostringstream out;
    out << "run  best_epoch  eval_loss  accuracy  macro_f1  excess_risk\n";
    for (const auto& r : runs) {
        out << r.name << "  " << r.best.epoch << "  " << opt_cell(r.best.eval_loss) << "  "
            << opt_cell(r.best.accuracy) << "  " << opt_cell(r.best.macro_f1) << "  "
            << opt_cell(r.best.excess_risk) << '\n';
    }
    return out.str();
}

CurveSeries eval_curve(const std::string& label, const std::vector<MetricsRecord>& records,
                       const std::string& metric) {
    CurveSeries series;
    series.label = label;
    for (const auto& r : records) {
        if (r.client_id != "global") {
            continue;
        }
        std::optional<double> v;
        if (metric == "eval_loss") {
            v = r.eval_loss;
        } else if (metric == "accuracy") {
            v = r.accuracy;
        } else if (metric == "macro_f1") {
            v = r.macro_f1;
        } else if (metric == "excess_risk") {
            v = r.excess_risk;
        } else {
            throw ContractError("eval_curve: unknown metric '" + metric + "'");
        }
        if (v) {
            series.x.push_back(static_cast<double>(r.round));
            series.y.push_back(*v);
        }
    }
    return series;
}

void write_curves_svg(const std::vector<CurveSeries>& series, const std::string& y_label,
                      const std::string& path) {
    constexpr double width = 640.0, height = 400.0, margin = 48.0;
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
    bool first = true;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                x_min = x_max = s.x[i];
                y_min = y_max = s.y[i];
                first = false;
            }
            x_min = std::min(x_min, s.x[i]);
            x_max = std::max(x_max, s.x[i]);
            y_min = std::min(y_min, s.y[i]);
            y_max = std::max(y_max, s.y[i]);
        }
    }
    if (x_max == x_min) {
        x_max = x_min + 1.0;
    }
    if (y_max == y_min) {
        y_max = y_min + 1.0;
    }
    auto px = [&](double x) {
        return margin + (x - x_min) / (x_max - x_min) * (width - 2.0 * margin);
    };
    auto py = [&](double y) {
        return height - margin - (y - y_min) / (y_max - y_min) * (height - 2.0 * margin);
    };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("write_curves_svg: cannot open '" + path + "'");
    }
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_double(width)
        << "\" height=\"" << format_double(height) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << format_double(margin) << "\" y1=\"" << format_double(height - margin)
        << "\" x2=\"" << format_double(width - margin) << "\" y2=\""
        << format_double(height - margin) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << format_double(margin) << "\" y1=\"" << format_double(margin)
        << "\" x2=\"" << format_double(margin) << "\" y2=\"" << format_double(height - margin)
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << format_double(width / 2.0) << "\" y=\"" << format_double(height - 10.0)
        << "\" text-anchor=\"middle\" font-size=\"13\">aggregation round</text>\n";
    out << "<text x=\"14\" y=\"" << format_double(height / 2.0)
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 "
        << format_double(height / 2.0) << ")\">" << y_label << "</text>\n";
    out << "<text x=\"" << format_double(margin - 4.0) << "\" y=\""
        << format_double(height - margin + 14.0) << "\" text-anchor=\"end\" font-size=\"11\">"
        << format_double(x_min) << "</text>\n";
    out << "<text x=\"" << format_double(width - margin) << "\" y=\""
        << format_double(height - margin + 14.0) << "\" text-anchor=\"middle\" font-size=\"11\">"
        << format_double(x_max) << "</text>\n";
    out << "<text x=\"" << format_double(margin - 6.0) << "\" y=\""
        << format_double(height - margin) << "\" text-anchor=\"end\" font-size=\"11\">"
        << format_double(y_min) << "</text>\n";
    out << "<text x=\"" << format_double(margin - 6.0) << "\" y=\"" << format_double(margin + 4.0)
        << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(y_max) << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& curve = series[s];
        const char* color = colors[s % 8];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < curve.x.size(); ++i) {
            out << (i > 0 ? " " : "") << format_double(px(curve.x[i])) << ','
                << format_double(py(curve.y[i]));
        }
        out << "\"/>\n";
        out << "<text x=\"" << format_double(width - margin + 4.0) << "\" y=\""
            << format_double(margin + 16.0 * static_cast<double>(s)) << "\" font-size=\"11\" fill=\""
            << color << "\">" << curve.label << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) {
        throw IoError("write_curves_svg: write to '" + path + "' failed");
    }
}

} // namespace fedsim
