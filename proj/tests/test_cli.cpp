// End-to-end tests that exercise the built binary as a subprocess: exit codes,
// file outputs, determinism across reruns, and the train -> eval round trip.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#ifndef STWA_CLI_PATH
#error "STWA_CLI_PATH must point at the built binary"
#endif
#define STWA_STR1(x) #x
#define STWA_STR(x) STWA_STR1(x)

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = STWA_STR(STWA_CLI_PATH);

struct RunResult {
    int exit_code;
    std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
    std::string cmd = kCli + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    int status = pclose(pipe);
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return {code, out};
}

// Scratch directory shared by all cases in this binary, wiped on first use.
fs::path work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() /
                     ("stwa_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    REQUIRE(out.good());
    out << body;
}

// Small synth dataset reused by the train/eval cases. Generated once.
fs::path shared_data() {
    static fs::path csv = [] {
        fs::path p = work_dir() / "data.csv";
        auto r = run_cli("synth --out " + p.string() + " --N 2 --T 300 --seed 31");
        REQUIRE(r.exit_code == 0);
        return p;
    }();
    return csv;
}

// Config that trains in well under a second.
json tiny_config() {
    return json{
        {"variant", "WA"}, {"H", 12},    {"U", 12},        {"d", 4},
        {"k", 3},          {"L", 2},     {"S", {2, 2}},    {"p", 1},
        {"enc_h1", 4},     {"enc_h2", 4},{"dec_h1", 4},    {"dec_h2", 4},
        {"predictor_hidden", 8},         {"d_skip", 8},
        {"batch", 32},     {"lr", 3e-3}, {"max_epochs", 2},{"patience", 8},
        {"seed", 7},
    };
}

fs::path write_config(const std::string& name, const json& j) {
    fs::path p = work_dir() / name;
    spit(p, j.dump(2));
    return p;
}

}  // namespace

TEST_CASE("argument errors exit 2, help exits 0") {
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("frobnicate").exit_code == 2);
    CHECK(run_cli("synth").exit_code == 2);  // --out is required

    auto help = run_cli("--help");
    CHECK(help.exit_code == 0);
    CHECK_THAT(help.output, Catch::Matchers::ContainsSubstring("train"));
    CHECK_THAT(help.output, Catch::Matchers::ContainsSubstring("bench"));
}

TEST_CASE("synth is deterministic per seed") {
    fs::path a = work_dir() / "synth_a.csv";
    fs::path b = work_dir() / "synth_b.csv";
    fs::path c = work_dir() / "synth_c.csv";
    REQUIRE(run_cli("synth --out " + a.string() + " --N 3 --T 50 --seed 9").exit_code == 0);
    REQUIRE(run_cli("synth --out " + b.string() + " --N 3 --T 50 --seed 9").exit_code == 0);
    REQUIRE(run_cli("synth --out " + c.string() + " --N 3 --T 50 --seed 10").exit_code == 0);

    std::string sa = slurp(a);
    CHECK(sa == slurp(b));
    CHECK(sa != slurp(c));
    // header plus one line per step
    CHECK(std::count(sa.begin(), sa.end(), '\n') == 51);
}

TEST_CASE("train writes checkpoint, loss curve and report") {
    fs::path cfg = write_config("train_cfg.json", tiny_config());
    fs::path out = work_dir() / "run_main";
    auto r = run_cli("train --config " + cfg.string() + " --data " +
                     shared_data().string() + " --out " + out.string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);

    REQUIRE(fs::exists(out / "checkpoint.stwa"));
    REQUIRE(fs::exists(out / "loss_curve.csv"));
    REQUIRE(fs::exists(out / "report.json"));

    std::string curve = slurp(out / "loss_curve.csv");
    CHECK(curve.rfind("epoch,train_loss,val_mae,val_rmse,val_mape\n", 0) == 0);
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 3);  // header + 2 epochs

    json rep = json::parse(slurp(out / "report.json"));
    CHECK(rep["config"]["variant"] == "WA");
    CHECK(rep["epochs"].size() == 2);
    CHECK(rep["best_epoch"].get<int>() >= 1);
    CHECK(rep["test"]["mae"].get<double>() > 0.0);
    CHECK(rep["parameter_count"].get<int>() > 0);
}

TEST_CASE("eval reproduces the report's test metrics exactly") {
    fs::path out = work_dir() / "run_main";
    if (!fs::exists(out / "checkpoint.stwa")) {
        fs::path cfg = write_config("train_cfg.json", tiny_config());
        REQUIRE(run_cli("train --config " + cfg.string() + " --data " +
                        shared_data().string() + " --out " + out.string())
                    .exit_code == 0);
    }

    auto r = run_cli("eval --checkpoint " + (out / "checkpoint.stwa").string() +
                     " --data " + shared_data().string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);

    json ev = json::parse(r.output);
    json rep = json::parse(slurp(out / "report.json"));
    // same split, same normalizer, so the doubles must agree bit for bit
    CHECK(ev["metrics"]["mae"].get<double>() == rep["test"]["mae"].get<double>());
    CHECK(ev["metrics"]["rmse"].get<double>() == rep["test"]["rmse"].get<double>());
    CHECK(ev["variant"] == "WA");
}

TEST_CASE("eval rejects a tampered checkpoint") {
    fs::path out = work_dir() / "run_main";
    REQUIRE(fs::exists(out / "checkpoint.stwa"));  // ordered after the train case

    std::string blob = slurp(out / "checkpoint.stwa");
    blob[blob.size() - 5] ^= 0x40;
    fs::path bad = work_dir() / "tampered.stwa";
    spit(bad, blob);

    auto r = run_cli("eval --checkpoint " + bad.string() + " --data " +
                     shared_data().string());
    CHECK(r.exit_code == 2);
    CHECK_THAT(r.output, Catch::Matchers::ContainsSubstring("checksum/shape mismatch"));
}

TEST_CASE("seed flag overrides config and pins the loss curve") {
    json cfg = tiny_config();
    fs::path cfgp = write_config("seed_cfg.json", cfg);
    fs::path o5a = work_dir() / "seed5a";
    fs::path o5b = work_dir() / "seed5b";
    fs::path o6 = work_dir() / "seed6";
    std::string base = "train --config " + cfgp.string() + " --data " +
                       shared_data().string() + " --out ";
    REQUIRE(run_cli(base + o5a.string() + " --seed 5").exit_code == 0);
    REQUIRE(run_cli(base + o5b.string() + " --seed 5").exit_code == 0);
    REQUIRE(run_cli(base + o6.string() + " --seed 6").exit_code == 0);

    std::string c5a = slurp(o5a / "loss_curve.csv");
    CHECK(c5a == slurp(o5b / "loss_curve.csv"));
    CHECK(c5a != slurp(o6 / "loss_curve.csv"));

    json rep = json::parse(slurp(o5a / "report.json"));
    CHECK(rep["config"]["seed"] == 5);
}

TEST_CASE("config errors exit 2 and name the offender") {
    json bad = tiny_config();
    bad["bogus_key"] = 1;
    fs::path cfgp = write_config("bad_key.json", bad);
    auto r = run_cli("train --config " + cfgp.string() + " --data " +
                     shared_data().string() + " --out " +
                     (work_dir() / "never").string());
    CHECK(r.exit_code == 2);
    CHECK_THAT(r.output, Catch::Matchers::ContainsSubstring("bogus_key"));

    auto rv = run_cli("train --variant NOPE --data " + shared_data().string() +
                      " --out " + (work_dir() / "never2").string());
    CHECK(rv.exit_code == 2);
    CHECK_THAT(rv.output, Catch::Matchers::ContainsSubstring("NOPE"));
}

TEST_CASE("sensor count mismatch between config and data exits 2") {
    json cfg = tiny_config();
    cfg["N"] = 5;  // data.csv has 2 sensors
    fs::path cfgp = write_config("n_clash.json", cfg);
    auto r = run_cli("train --config " + cfgp.string() + " --data " +
                     shared_data().string() + " --out " +
                     (work_dir() / "never3").string());
    CHECK(r.exit_code == 2);
    CHECK_THAT(r.output, Catch::Matchers::ContainsSubstring("N=5"));
}

TEST_CASE("missing data file exits 1") {
    auto r = run_cli("train --data " + (work_dir() / "no_such.csv").string() +
                     " --out " + (work_dir() / "never4").string());
    CHECK(r.exit_code == 1);
    CHECK_THAT(r.output, Catch::Matchers::ContainsSubstring("no_such.csv"));
}

TEST_CASE("data too short for one window exits 2") {
    fs::path tiny = work_dir() / "short.csv";
    REQUIRE(run_cli("synth --out " + tiny.string() + " --N 2 --T 30 --seed 1").exit_code == 0);
    auto r = run_cli("train --data " + tiny.string() + " --out " +
                     (work_dir() / "never5").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("bench CSV is sorted and carries the expected header") {
    fs::path csv = work_dir() / "bench.csv";
    auto r = run_cli("bench --out " + csv.string() +
                     " --repeats 1 --H 24 --H 12 --variant WA --variant SA");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);

    std::ifstream in(csv);
    REQUIRE(in.good());
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "variant,H,status,median_ms,scores,analytic_scores,params,peak_bytes,note");

    std::vector<std::pair<std::string, int>> order;
    while (std::getline(in, line)) {
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        order.emplace_back(line.substr(0, c1),
                           std::stoi(line.substr(c1 + 1, c2 - c1 - 1)));
        CHECK_THAT(line, Catch::Matchers::ContainsSubstring(",ok,"));
    }
    std::vector<std::pair<std::string, int>> expected = {
        {"SA", 12}, {"SA", 24}, {"WA", 12}, {"WA", 24}};
    CHECK(order == expected);
}
