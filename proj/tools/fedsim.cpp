#include "fedsim/csv.hpp"
#include "fedsim/error.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

fedsim::ExperimentConfig resolve_config(const std::string& config_path,
                                        const std::vector<std::string>& overrides,
                                        const std::optional<std::uint64_t>& seed,
                                        const std::string& out_dir) {
    fedsim::ExperimentConfig cfg;
    if (!config_path.empty()) {
        cfg = fedsim::load_config_file(config_path);
    }
    for (const auto& kv : overrides) {
        fedsim::apply_override(cfg, kv);
    }
    if (seed) {
        cfg.seed = *seed;
    }
    if (!out_dir.empty()) {
        cfg.out_dir = out_dir;
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated low-rank fine-tuning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    for (auto* sub : {app.add_subcommand("partition", "write non-IID shard CSVs and a manifest"),
                      app.add_subcommand("train", "run a federated training experiment"),
                      app.add_subcommand("report", "summarize metrics CSVs and plot eval curves")}) {
        sub->add_option("--config", config_path, "config file (key = value lines)");
        sub->add_option("--set", overrides, "override, e.g. --set optimizer.lr=0.05")
            ->take_all();
        sub->add_option("--seed", seed, "run seed");
        sub->add_option("--out", out_dir, "output directory");
    }
    std::vector<std::string> report_inputs;
    app.get_subcommand("report")
        ->add_option("inputs", report_inputs, "metrics.csv files")
        ->expected(-1);
    std::string report_metric = "macro_f1";
    app.get_subcommand("report")
        ->add_option("--metric", report_metric, "curve metric (macro_f1|accuracy|eval_loss|excess_risk)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("partition")) {
            const auto cfg = resolve_config(config_path, overrides, seed, out_dir);
            const std::string manifest = fedsim::cmd_partition(cfg);
            std::cout << "wrote " << manifest << "\n";
        } else if (app.got_subcommand("train")) {
            const auto cfg = resolve_config(config_path, overrides, seed, out_dir);
            const auto art = fedsim::cmd_train(cfg);
            std::cout << "wrote " << art.metrics_csv << "\n"
                      << "wrote " << art.model_file << "\n"
                      << "rounds: " << art.run.total_rounds << "\n";
        } else {
            if (report_inputs.empty()) {
                throw fedsim::ContractError("report: no metrics.csv inputs given");
            }
            std::vector<fedsim::RunSummary> summaries;
            std::vector<fedsim::CurveSeries> curves;
            for (const auto& path : report_inputs) {
                const auto records = fedsim::read_metrics_csv(path);
                const std::string label = std::filesystem::path(path).parent_path().filename()
                                              .string()
                                              .empty()
                                          ? std::filesystem::path(path).stem().string()
                                          : std::filesystem::path(path).parent_path().filename()
                                                .string();
                summaries.push_back(fedsim::summarize_run(label, records));
                curves.push_back(fedsim::eval_curve(label, records, report_metric));
            }
            std::cout << fedsim::format_summary_table(summaries);
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                const auto dir = std::filesystem::path(out_dir);
                fedsim::write_summary_csv(summaries, (dir / "summary.csv").string());
                fedsim::write_curves_svg(curves, report_metric, (dir / "curves.svg").string());
                std::cout << "wrote " << (dir / "summary.csv").string() << "\n"
                          << "wrote " << (dir / "curves.svg").string() << "\n";
            }
        }
    } catch (const fedsim::ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fedsim::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const fedsim::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const fedsim::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
