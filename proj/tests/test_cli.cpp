#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string output;
};

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

// Runs the installed binary with stdout+stderr captured to a scratch file.
CliResult run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const fs::path log = fs::temp_directory_path() / ("consense_cli_out_" + std::to_string(counter++));
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(CONSENSE_CLI_PATH) + " " + args +
                            " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_file(log);
    fs::remove(log);
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("consense_cli_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const std::string kTinyRun =
    "run --classes 4 --per-class 6 --t 12 --c 6 --heads 3 --gaussians 3 --adapter-rank 2 "
    "--split 2,2 --epochs 1 --batch 4 --noise 0.1 --data-seed 3";

}  // namespace

TEST_CASE("help and usage errors use the documented exit codes") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("gen --help").code == 0);
    CHECK(run_cli("--no-such-flag").code == 2);
    CHECK(run_cli("run --classes").code == 2);  // missing value
}

TEST_CASE("gen writes a loadable dataset and is deterministic") {
    TempDir dir("gen");
    const std::string base1 = (dir.path / "one" / "ds").string();
    const std::string base2 = (dir.path / "two" / "ds").string();
    const std::string flags = "gen --classes 3 --per-class 4 --t 8 --c 6 --seed 7 --noise 0.1 --out ";

    CHECK(run_cli(flags + base1).code == 0);
    CHECK(run_cli(flags + base2).code == 0);
    CHECK(fs::exists(base1 + ".json"));
    CHECK(fs::exists(base1 + ".f32"));
    CHECK(read_file(base1 + ".json") == read_file(base2 + ".json"));
    CHECK(read_file(base1 + ".f32") == read_file(base2 + ".f32"));

    const std::string csv = (dir.path / "ds.csv").string();
    CHECK(run_cli(flags + (dir.path / "three" / "ds").string() + " --csv " + csv).code == 0);
    CHECK(fs::exists(csv));
}

TEST_CASE("gen rejects invalid generation parameters with exit code 2") {
    TempDir dir("genbad");
    CHECK(run_cli("gen --classes 1 --per-class 4 --t 8 --c 6 --out " + (dir.path / "ds").string()).code == 2);
    CHECK(run_cli("gen --classes 3 --per-class 4 --t 8 --c 6 --noise -1 --out " +
                  (dir.path / "ds").string())
              .code == 2);
}

TEST_CASE("run emits a summary with metrics, parameters and the config echo") {
    TempDir dir("run");
    CliResult r = run_cli(kTinyRun + " --seed 5 --out " + (dir.path / "exp").string());
    REQUIRE(r.code == 0);

    for (const char* artifact : {"config.json", "summary.json", "alpha.csv", "session_1.ckpt", "session_2.ckpt"}) {
        CHECK(fs::exists(dir.path / "exp" / artifact));
    }

    const nlohmann::json summary = nlohmann::json::parse(read_file(dir.path / "exp" / "summary.json"));
    CHECK(summary.contains("average_accuracy"));
    CHECK(summary.contains("average_forgetting"));
    CHECK(summary.contains("alpha"));
    CHECK(summary.at("alpha").size() == 2);
    CHECK(summary.at("cumulative_accuracy").size() == 2);
    CHECK(summary.at("method") == "consense");
    CHECK(summary.at("parameters").at("total").get<std::size_t>() > 0);
    CHECK(summary.at("config").at("classes") == 4);
    const double acc = summary.at("average_accuracy").get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
}

TEST_CASE("run is deterministic for a fixed seed") {
    TempDir dir("runseed");
    CliResult a = run_cli(kTinyRun + " --seed 9 --out " + (dir.path / "a").string());
    CliResult b = run_cli(kTinyRun + " --seed 9 --out " + (dir.path / "b").string());
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(read_file(dir.path / "a" / "summary.json") == read_file(dir.path / "b" / "summary.json"));
    CHECK(read_file(dir.path / "a" / "alpha.csv") == read_file(dir.path / "b" / "alpha.csv"));
}

TEST_CASE("the seed environment variable overrides the flag") {
    TempDir dir("runenv");
    CliResult flag = run_cli(kTinyRun + " --seed 5 --out " + (dir.path / "flag").string());
    CliResult env = run_cli(kTinyRun + " --seed 1 --out " + (dir.path / "env").string(), "CONSENSE_SEED=5");
    REQUIRE(flag.code == 0);
    REQUIRE(env.code == 0);
    const nlohmann::json a = nlohmann::json::parse(read_file(dir.path / "flag" / "summary.json"));
    const nlohmann::json b = nlohmann::json::parse(read_file(dir.path / "env" / "summary.json"));
    CHECK(a.at("average_accuracy") == b.at("average_accuracy"));
    CHECK(b.at("config").at("seed") == 5);
    CHECK(run_cli(kTinyRun, "CONSENSE_SEED=banana").code == 2);
}

TEST_CASE("ablation and baseline arms run from the command line") {
    TempDir dir("arms");
    CHECK(run_cli(kTinyRun + " --seed 2 --disable-prefixes --disable-selective").code == 0);
    CHECK(run_cli(kTinyRun + " --seed 2 --method finetune").code == 0);
    CHECK(run_cli(kTinyRun + " --seed 2 --prefix-init random").code == 0);
    CHECK(run_cli(kTinyRun + " --seed 2 --method mystery").code == 2);
    CHECK(run_cli(kTinyRun + " --seed 2 --prefix-init sideways").code == 2);
}

TEST_CASE("run can load a dataset generated on disk and a json config") {
    TempDir dir("io");
    const std::string base = (dir.path / "ds").string();
    REQUIRE(run_cli("gen --classes 4 --per-class 6 --t 12 --c 6 --seed 3 --noise 0.1 --out " + base).code ==
            0);
    CHECK(run_cli("run --dataset " + base +
                  " --split 2,2 --heads 3 --gaussians 3 --adapter-rank 2 --epochs 1 --batch 4 --seed 5")
              .code == 0);

    // Flags override config-file fields.
    const fs::path cfg_path = dir.path / "cfg.json";
    std::ofstream(cfg_path) << nlohmann::json{{"classes", 4}, {"per_class", 6},  {"t_len", 12},
                                              {"channels", 6}, {"heads", 3},     {"gaussians", 3},
                                              {"adapter_rank", 2}, {"split", {2, 2}}, {"epochs", 1},
                                              {"batch", 4},    {"noise_sigma", 0.1}}
                                .dump();
    CHECK(run_cli("run --config " + cfg_path.string() + " --seed 4").code == 0);
    std::ofstream(cfg_path) << "{ broken";
    CHECK(run_cli("run --config " + cfg_path.string()).code == 2);
}

TEST_CASE("verification suites report their checks and catch planted faults") {
    CliResult all = run_cli("verify --suite metrics");
    CHECK(all.code == 0);
    CHECK(all.output.find("metrics") != std::string::npos);

    CliResult fault = run_cli("verify --inject-fault relu");
    CHECK(fault.code == 1);
    CHECK(fault.output.find("relu") != std::string::npos);

    CHECK(run_cli("verify --suite no-such-suite").code == 2);
}
