#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// Spawns the installed CLI and checks the documented exit codes. The binary
// path comes from the FEDSIM_CLI environment variable set by ctest.

namespace {

const char* cli_path() { return std::getenv("FEDSIM_CLI"); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("cli: exit codes match the documented mapping") {
    if (!cli_path()) {
        MESSAGE("FEDSIM_CLI not set; skipping CLI exit-code checks");
        return;
    }
    const auto dir = std::filesystem::temp_directory_path() / "fedsim_cli_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const std::string out = (dir / "run").string();

    // 0: a tiny successful train run
    CHECK(run_cli("train --set data.n=120 --set data.num_clients=2 --set model.classes=3"
                  " --set model.feature_dim=4 --set method=direct_sgd"
                  " --set schedule.epochs=1 --set schedule.t_agg=5"
                  " --set schedule.batch_size=2 --seed 3 --out " + out) == 0);
    CHECK(std::filesystem::exists(dir / "run" / "metrics.csv"));

    // 2: config error
    CHECK(run_cli("train --set no.such.key=1 --out " + out) == 2);
    // 3: data error (malformed csv row)
    const std::string bad = (dir / "bad.csv").string();
    {
        std::ofstream f(bad);
        f << "f0,label\nnot_a_number,0\n";
    }
    CHECK(run_cli("train --set data.source=csv --set data.csv=" + bad + " --out " + out) == 3);
    // 5: I/O error (missing input file)
    CHECK(run_cli("report " + (dir / "missing.csv").string()) == 5);

    std::filesystem::remove_all(dir);
}
