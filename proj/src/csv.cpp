#include "fedsim/csv.hpp"

#include "fedsim/error.hpp"
#include "fedsim/text.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fedsim {

std::string format_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) {
            break;
        }
    }
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) {
        ++b;
    }
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) {
        --e;
    }
    return s.substr(b, e - b);
}

const std::vector<std::string>& metrics_csv_columns() {
    static const std::vector<std::string> cols = {
        "epoch",         "round",         "local_step",      "client_id",
        "loss",          "eval_loss",     "accuracy",        "macro_f1",
        "excess_risk",   "agg_update_rank", "svd_tail_mass", "entropy_Wup",
        "grad_spectral_norm", "weight_spectral_norm", "bound_direct", "bound_ffalora"};
    return cols;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
std::string cell(const std::optional<int>& v) { return v ? std::to_string(*v) : ""; }

std::optional<double> parse_opt_double(const std::string& s, const std::string& where) {
    if (s.empty()) {
        return std::nullopt;
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
        throw DataError("metrics csv: bad numeric cell '" + s + "' at " + where);
    }
    return v;
}

std::optional<int> parse_opt_int(const std::string& s, const std::string& where) {
    auto d = parse_opt_double(s, where);
    if (!d) {
        return std::nullopt;
    }
    return static_cast<int>(*d);
}

} // namespace

void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("write_metrics_csv: cannot open '" + path + "'");
    }
    const auto& cols = metrics_csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out << (i > 0 ? "," : "") << cols[i];
    }
    out << '\n';
    for (const auto& r : records) {
        out << r.epoch << ',' << r.round << ',' << cell(r.local_step) << ',' << r.client_id << ','
            << cell(r.loss) << ',' << cell(r.eval_loss) << ',' << cell(r.accuracy) << ','
            << cell(r.macro_f1) << ',' << cell(r.excess_risk) << ',' << cell(r.agg_update_rank)
            << ',' << cell(r.svd_tail_mass) << ',' << cell(r.entropy_wup) << ','
            << cell(r.grad_spectral_norm) << ',' << cell(r.weight_spectral_norm) << ','
            << cell(r.bound_direct) << ',' << cell(r.bound_ffalora) << '\n';
    }
    if (!out) {
        throw IoError("write_metrics_csv: write to '" + path + "' failed");
    }
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("read_metrics_csv: cannot open '" + path + "'");
    }
    std::string header;
    if (!std::getline(in, header)) {
        throw DataError("read_metrics_csv: '" + path + "' is empty");
    }
    const auto cols = split(trim(header), ',');
    const auto& expected = metrics_csv_columns();
    for (const auto& name : expected) {
        bool found = false;
        for (const auto& c : cols) {
            if (c == name) {
                found = true;
                break;
            }
        }
        if (!found) {
            throw DataError("read_metrics_csv: '" + path + "' missing column '" + name + "'");
        }
    }
    if (cols.size() != expected.size()) {
        throw DataError("read_metrics_csv: '" + path + "' has unexpected extra columns");
    }
    std::vector<std::size_t> index(expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (cols[j] == expected[i]) {
                index[i] = j;
            }
        }
    }

    std::vector<MetricsRecord> records;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != expected.size()) {
            throw DataError("read_metrics_csv: '" + path + "' row " + std::to_string(row) +
                            ": expected " + std::to_string(expected.size()) + " cells");
        }
        auto field = [&](std::size_t i) { return cells[index[i]]; };
        const std::string where = path + ":" + std::to_string(row);
        MetricsRecord r;
        r.epoch = static_cast<int>(std::strtol(field(0).c_str(), nullptr, 10));
        r.round = static_cast<int>(std::strtol(field(1).c_str(), nullptr, 10));
        r.local_step = parse_opt_int(field(2), where);
        r.client_id = field(3);
        r.loss = parse_opt_double(field(4), where);
        r.eval_loss = parse_opt_double(field(5), where);
        r.accuracy = parse_opt_double(field(6), where);
        r.macro_f1 = parse_opt_double(field(7), where);
        r.excess_risk = parse_opt_double(field(8), where);
        r.agg_update_rank = parse_opt_int(field(9), where);
        r.svd_tail_mass = parse_opt_double(field(10), where);
        r.entropy_wup = parse_opt_double(field(11), where);
        r.grad_spectral_norm = parse_opt_double(field(12), where);
        r.weight_spectral_norm = parse_opt_double(field(13), where);
        r.bound_direct = parse_opt_double(field(14), where);
        r.bound_ffalora = parse_opt_double(field(15), where);
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace fedsim
