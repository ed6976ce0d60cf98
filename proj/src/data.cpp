#include "fedsim/data.hpp"

#include "fedsim/error.hpp"
#include "fedsim/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedsim {

void LabeledDataset::validate() const {
    if (empty()) {
        throw DataError("dataset: empty");
    }
    if (num_classes == 0) {
        throw DataError("dataset: num_classes is zero");
    }
    for (std::int32_t y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw DataError("dataset: label out of range");
        }
    }
    if (kind == DatasetKind::vector && features.size() != labels.size()) {
        throw DataError("dataset: features/labels size mismatch");
    }
    if (kind == DatasetKind::sequence && tokens.size() != labels.size()) {
        throw DataError("dataset: tokens/labels size mismatch");
    }
}

std::vector<std::size_t> LabeledDataset::class_histogram() const {
    std::vector<std::size_t> hist(num_classes, 0);
    for (std::int32_t y : labels) {
        ++hist[static_cast<std::size_t>(y)];
    }
    return hist;
}

LabeledDataset synth_vectors(std::size_t n, std::size_t num_classes, std::size_t dim,
                             double cluster_sep, RngSeed seed) {
    if (num_classes < 1 || n < num_classes) {
        throw ContractError("synth_vectors: need n >= num_classes >= 1");
    }
    Rng mean_rng(derive_seed(seed, "cluster-means"));
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (c < dim) {
            means[c][c] = cluster_sep;
        } else {
            // more classes than axes: random unit direction scaled to cluster_sep
            double norm2 = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                means[c][j] = mean_rng.next_gaussian(1.0);
                norm2 += means[c][j] * means[c][j];
            }
            const double scale = cluster_sep / std::sqrt(norm2);
            for (double& v : means[c]) {
                v *= scale;
            }
        }
    }
    Rng rng(derive_seed(seed, "samples"));
    LabeledDataset ds;
    ds.kind = DatasetKind::vector;
    ds.num_classes = num_classes;
    ds.features.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % num_classes;
        std::vector<double> x(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            x[j] = means[c][j] + rng.next_gaussian(1.0);
        }
        ds.features.push_back(std::move(x));
        ds.labels.push_back(static_cast<std::int32_t>(c));
    }
    return ds;
}

LabeledDataset synth_sequences(std::size_t n, std::size_t num_classes, std::size_t vocab,
                               std::size_t seq_len, RngSeed seed, double in_band_prob) {
    if (num_classes < 1 || n < num_classes || seq_len < 1) {
        throw ContractError("synth_sequences: need n >= num_classes >= 1 and seq_len >= 1");
    }
    if (vocab < 2 * num_classes) {
        throw ContractError("synth_sequences: vocab must be >= 2 * num_classes");
    }
    if (in_band_prob < 0.0 || in_band_prob > 1.0) {
        throw ContractError("synth_sequences: in_band_prob must lie in [0, 1]");
    }
    auto band_begin = [&](std::size_t c) { return c * vocab / num_classes; };
    Rng rng(derive_seed(seed, "sequences"));
    LabeledDataset ds;
    ds.kind = DatasetKind::sequence;
    ds.num_classes = num_classes;
    ds.tokens.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % num_classes;
        const std::size_t lo = band_begin(c);
        const std::size_t width = band_begin(c + 1) - lo;
        std::vector<std::int32_t> seq(seq_len);
        std::size_t tok = lo + rng.next_index(width);
        seq[0] = static_cast<std::int32_t>(tok);
        for (std::size_t t = 1; t < seq_len; ++t) {
            if (rng.next_double() < in_band_prob) {
                // chain step inside the class band, anchored on the previous token
                tok = lo + (tok - lo + 1 + rng.next_index(width)) % width;
            } else {
                tok = rng.next_index(vocab);
            }
            seq[t] = static_cast<std::int32_t>(tok);
        }
        ds.tokens.push_back(std::move(seq));
        ds.labels.push_back(static_cast<std::int32_t>(c));
    }
    return ds;
}

namespace {

LabeledDataset empty_like(const LabeledDataset& ds) {
    LabeledDataset out;
    out.kind = ds.kind;
    out.num_classes = ds.num_classes;
    return out;
}

void append_item(LabeledDataset& dst, const LabeledDataset& src, std::size_t idx) {
    if (src.kind == DatasetKind::vector) {
        dst.features.push_back(src.features[idx]);
    } else {
        dst.tokens.push_back(src.tokens[idx]);
    }
    dst.labels.push_back(src.labels[idx]);
}

// largest-remainder integer allocation of `total` across weights p
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& p) {
    const std::size_t n = p.size();
    std::vector<std::size_t> counts(n, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = static_cast<double>(total) * p[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
    });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) {
        ++counts[remainders[k % n].second];
    }
    return counts;
}

} // namespace

std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& ds,
                                                const PartitionSpec& spec) {
    ds.validate();
    if (spec.num_clients < 1) {
        throw ContractError("dirichlet_partition: num_clients must be >= 1");
    }
    if (spec.alpha <= 0.0) {
        throw ContractError("dirichlet_partition: alpha must be positive");
    }
    const std::size_t n_clients = spec.num_clients;
    const auto hist = ds.class_histogram();
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        if (hist[c] == 0) {
            throw ContractError("dirichlet_partition: class " + std::to_string(c) +
                                " has no samples");
        }
    }

    // per-class sample index lists, shuffled
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    Rng shuffle_rng(derive_seed(spec.seed, "class-shuffle"));
    for (auto& idx : by_class) {
        shuffle_rng.shuffle(idx);
    }

    Rng dir_rng(derive_seed(spec.seed, "dirichlet"));
    std::vector<std::vector<std::size_t>> shard_indices(n_clients);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        std::vector<double> gamma(n_clients);
        double total = 0.0;
        for (std::size_t i = 0; i < n_clients; ++i) {
            gamma[i] = dir_rng.next_gamma(spec.alpha);
            total += gamma[i];
        }
        for (double& g : gamma) {
            g /= total;
        }
        const auto counts = apportion(by_class[c].size(), gamma);
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < n_clients; ++i) {
            for (std::size_t k = 0; k < counts[i]; ++k) {
                shard_indices[i].push_back(by_class[c][cursor++]);
            }
        }
    }

    if (spec.equal_sizes) {
        // target sizes within +-1; surplus moves from the largest shard's most
        // abundant class to the neediest shard, deterministically
        std::vector<std::size_t> target(n_clients, ds.size() / n_clients);
        for (std::size_t i = 0; i < ds.size() % n_clients; ++i) {
            ++target[i];
        }
        auto shard_class_counts = [&](std::size_t i) {
            std::vector<std::size_t> counts(ds.num_classes, 0);
            for (std::size_t idx : shard_indices[i]) {
                ++counts[static_cast<std::size_t>(ds.labels[idx])];
            }
            return counts;
        };
        for (;;) {
            std::size_t donor = n_clients, receiver = n_clients;
            std::ptrdiff_t worst_surplus = 0, worst_deficit = 0;
            for (std::size_t i = 0; i < n_clients; ++i) {
                const std::ptrdiff_t diff = static_cast<std::ptrdiff_t>(shard_indices[i].size()) -
                                            static_cast<std::ptrdiff_t>(target[i]);
                if (diff > worst_surplus) {
                    worst_surplus = diff;
                    donor = i;
                }
                if (diff < worst_deficit) {
                    worst_deficit = diff;
                    receiver = i;
                }
            }
            if (donor == n_clients || receiver == n_clients) {
                break;
            }
            const auto counts = shard_class_counts(donor);
            const std::size_t cls = static_cast<std::size_t>(
                std::max_element(counts.begin(), counts.end()) - counts.begin());
            // move the last sample of that class out of the donor
            auto& src = shard_indices[donor];
            for (std::size_t k = src.size(); k > 0; --k) {
                if (static_cast<std::size_t>(ds.labels[src[k - 1]]) == cls) {
                    shard_indices[receiver].push_back(src[k - 1]);
                    src.erase(src.begin() + static_cast<std::ptrdiff_t>(k - 1));
                    break;
                }
            }
        }
    }

    std::vector<LabeledDataset> shards;
    shards.reserve(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) {
        LabeledDataset shard = empty_like(ds);
        std::sort(shard_indices[i].begin(), shard_indices[i].end());
        for (std::size_t idx : shard_indices[i]) {
            append_item(shard, ds, idx);
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

TrainEvalSplit split_train_eval(const std::vector<LabeledDataset>& shards, double eval_fraction,
                                RngSeed seed) {
    if (eval_fraction <= 0.0 || eval_fraction > 0.5) {
        throw ContractError("split_train_eval: eval_fraction must lie in (0, 0.5]");
    }
    if (shards.empty()) {
        throw ContractError("split_train_eval: no shards");
    }
    TrainEvalSplit out;
    out.pooled_eval = empty_like(shards.front());
    for (std::size_t s = 0; s < shards.size(); ++s) {
        const LabeledDataset& shard = shards[s];
        shard.validate();
        const std::size_t eval_n =
            static_cast<std::size_t>(std::floor(eval_fraction * static_cast<double>(shard.size())));
        if (eval_n == 0) {
            throw ContractError("split_train_eval: shard " + std::to_string(s) +
                                " too small for a nonzero eval split");
        }
        const auto hist = shard.class_histogram();
        bool stratify = true;
        for (std::size_t c = 0; c < shard.num_classes; ++c) {
            if (hist[c] == 1) {
                stratify = false;
            }
        }
        Rng rng(derive_seed(seed, "eval-split", s));
        std::vector<bool> is_eval(shard.size(), false);
        if (stratify) {
            std::vector<double> weights(shard.num_classes);
            for (std::size_t c = 0; c < shard.num_classes; ++c) {
                weights[c] = static_cast<double>(hist[c]) / static_cast<double>(shard.size());
            }
            auto per_class = apportion(eval_n, weights);
            for (std::size_t c = 0; c < shard.num_classes; ++c) {
                // never strip a class entirely from the train side
                if (hist[c] > 0 && per_class[c] >= hist[c]) {
                    per_class[c] = hist[c] - 1;
                }
                std::vector<std::size_t> members;
                for (std::size_t i = 0; i < shard.size(); ++i) {
                    if (static_cast<std::size_t>(shard.labels[i]) == c) {
                        members.push_back(i);
                    }
                }
                rng.shuffle(members);
                for (std::size_t k = 0; k < per_class[c]; ++k) {
                    is_eval[members[k]] = true;
                }
            }
        } else {
            std::vector<std::size_t> order(shard.size());
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(order);
            for (std::size_t k = 0; k < eval_n; ++k) {
                is_eval[order[k]] = true;
            }
        }
        LabeledDataset train = empty_like(shard);
        for (std::size_t i = 0; i < shard.size(); ++i) {
            append_item(is_eval[i] ? out.pooled_eval : train, shard, i);
        }
        out.train_shards.push_back(std::move(train));
    }
    return out;
}

LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("load_csv: cannot open '" + path + "'");
    }
    std::string header;
    if (!std::getline(in, header)) {
        throw DataError("load_csv: '" + path + "' is empty");
    }
    while (!header.empty() && (header.back() == '\r' || header.back() == '\n')) {
        header.pop_back();
    }

    LabeledDataset ds;
    std::size_t dim = 0;
    if (header == "tokens,label") {
        ds.kind = DatasetKind::sequence;
    } else {
        ds.kind = DatasetKind::vector;
        std::stringstream hs(header);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(hs, col, ',')) {
            cols.push_back(col);
        }
        if (cols.size() < 2 || cols.back() != "label") {
            throw DataError("load_csv: '" + path + "' header must be f0,...,label or tokens,label");
        }
        for (std::size_t i = 0; i + 1 < cols.size(); ++i) {
            if (cols[i] != "f" + std::to_string(i)) {
                throw DataError("load_csv: '" + path + "' unexpected header column '" + cols[i] +
                                "'");
            }
        }
        dim = cols.size() - 1;
    }

    std::string line;
    std::size_t row = 1;
    std::int32_t max_label = -1;
    while (std::getline(in, line)) {
        ++row;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        auto bad_row = [&](const std::string& why) {
            return DataError("load_csv: '" + path + "' row " + std::to_string(row) + ": " + why);
        };
        auto parse_int = [&](const std::string& s) {
            std::size_t pos = 0;
            long v = 0;
            try {
                v = std::stol(s, &pos);
            } catch (const std::exception&) {
                throw bad_row("non-integer cell '" + s + "'");
            }
            if (pos != s.size()) {
                throw bad_row("non-integer cell '" + s + "'");
            }
            return static_cast<std::int32_t>(v);
        };
        if (ds.kind == DatasetKind::sequence) {
            if (cells.size() != 2) {
                throw bad_row("expected 2 cells, got " + std::to_string(cells.size()));
            }
            std::vector<std::int32_t> toks;
            std::stringstream ts(cells[0]);
            std::string tok;
            while (ts >> tok) {
                toks.push_back(parse_int(tok));
            }
            if (toks.empty()) {
                throw bad_row("empty token sequence");
            }
            ds.tokens.push_back(std::move(toks));
            ds.labels.push_back(parse_int(cells[1]));
        } else {
            if (cells.size() != dim + 1) {
                throw bad_row("expected " + std::to_string(dim + 1) + " cells, got " +
                              std::to_string(cells.size()));
            }
            std::vector<double> f(dim);
            for (std::size_t j = 0; j < dim; ++j) {
                char* end = nullptr;
                f[j] = std::strtod(cells[j].c_str(), &end);
                if (end != cells[j].c_str() + cells[j].size() || cells[j].empty()) {
                    throw bad_row("non-numeric cell '" + cells[j] + "'");
                }
            }
            ds.features.push_back(std::move(f));
            ds.labels.push_back(parse_int(cells[dim]));
        }
        if (ds.labels.back() < 0) {
            throw DataError("load_csv: '" + path + "' row " + std::to_string(row) +
                            ": negative label");
        }
        max_label = std::max(max_label, ds.labels.back());
    }
    if (ds.empty()) {
        throw DataError("load_csv: '" + path + "' has no data rows");
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

void save_csv(const LabeledDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("save_csv: cannot open '" + path + "' for writing");
    }
    if (ds.kind == DatasetKind::sequence) {
        out << "tokens,label\n";
        for (std::size_t i = 0; i < ds.size(); ++i) {
            for (std::size_t t = 0; t < ds.tokens[i].size(); ++t) {
                out << (t > 0 ? " " : "") << ds.tokens[i][t];
            }
            out << ',' << ds.labels[i] << '\n';
        }
    } else {
        const std::size_t dim = ds.features.front().size();
        for (std::size_t j = 0; j < dim; ++j) {
            out << 'f' << j << ',';
        }
        out << "label\n";
        for (std::size_t i = 0; i < ds.size(); ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                out << format_double(ds.features[i][j]) << ',';
            }
            out << ds.labels[i] << '\n';
        }
    }
    if (!out) {
        throw IoError("save_csv: write to '" + path + "' failed");
    }
}

std::string save_partition(const std::vector<LabeledDataset>& shards, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["shards"] = nlohmann::json::array();
    for (std::size_t i = 0; i < shards.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "shard_%03zu.csv", i);
        const std::string file = (std::filesystem::path(dir) / name).string();
        save_csv(shards[i], file);
        nlohmann::json entry;
        entry["shard"] = i;
        entry["file"] = name;
        entry["size"] = shards[i].size();
        entry["class_histogram"] = shards[i].class_histogram();
        manifest["shards"].push_back(entry);
    }
    const std::string manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) {
        throw IoError("save_partition: cannot write '" + manifest_path + "'");
    }
    out << manifest.dump(2) << '\n';
    return manifest_path;
}

LabeledDataset concat(const std::vector<LabeledDataset>& parts) {
    if (parts.empty()) {
        throw ContractError("concat: no datasets");
    }
    LabeledDataset out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i].kind != out.kind || parts[i].num_classes != out.num_classes) {
            throw ContractError("concat: incompatible datasets");
        }
        out.features.insert(out.features.end(), parts[i].features.begin(),
                            parts[i].features.end());
        out.tokens.insert(out.tokens.end(), parts[i].tokens.begin(), parts[i].tokens.end());
        out.labels.insert(out.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
    }
    return out;
}

Batch make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices) {
    Batch batch;
    for (std::size_t idx : indices) {
        if (idx >= ds.size()) {
            throw ContractError("make_batch: index out of range");
        }
        if (ds.kind == DatasetKind::vector) {
            batch.features.push_back(ds.features[idx]);
        } else {
            batch.tokens.push_back(ds.tokens[idx]);
        }
        batch.labels.push_back(ds.labels[idx]);
    }
    return batch;
}

Batch full_batch(const LabeledDataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return make_batch(ds, idx);
}

} // namespace fedsim
