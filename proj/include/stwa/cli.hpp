#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stwa/bench.hpp"
#include "stwa/checkpoint.hpp"
#include "stwa/data.hpp"
#include "stwa/model.hpp"
#include "stwa/training.hpp"

namespace stwa::cli {

namespace fs = std::filesystem;

// ==================== shared pieces ====================

inline ModelConfig load_config_file(const std::string& path) {
    if (path.empty()) return ModelConfig{};
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json metrics_json(const Metrics& m) {
    nlohmann::json j;
    j["mae"] = m.mae;
    j["rmse"] = m.rmse;
    if (m.mape)
        j["mape"] = *m.mape;
    else
        j["mape"] = nullptr;
    return j;
}

inline nlohmann::json report_json(const TrainReport& rep, const ModelConfig& cfg,
                                  std::size_t param_count, std::size_t train_windows) {
    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    j["parameter_count"] = param_count;
    j["train_windows"] = train_windows;
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : rep.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_mae", e.val_mae},
                          {"val_rmse", e.val_rmse},
                          {"val_mape", e.val_mape},  // NaN serializes as null
                          {"seconds", e.seconds}});
    }
    j["epochs"] = epochs;
    j["best_epoch"] = rep.best_epoch;
    j["best_val_mae"] = rep.best_val_mae;
    j["test"] = metrics_json(rep.test);
    j["train_seconds"] = rep.train_seconds;
    j["total_seconds"] = rep.total_seconds;
    return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << j.dump(2) << '\n';
    if (!f) throw IoError("write failed for '" + path + "'");
}

// ==================== subcommands ====================

struct TrainArgs {
    std::string config, data, out, variant;
    std::optional<std::uint64_t> seed;
};

inline int cmd_train(const TrainArgs& a) {
    ModelConfig cfg = load_config_file(a.config);
    if (!a.variant.empty()) cfg.variant = parse_variant(a.variant);
    if (a.seed) cfg.seed = *a.seed;

    SeriesStore series = load_csv(a.data);
    if (cfg.N == 0)
        cfg.N = series.N;
    else if (cfg.N != series.N)
        throw ConfigError("config expects N=" + std::to_string(cfg.N) + " sensors but '" +
                          a.data + "' has " + std::to_string(series.N));
    cfg.validate();

    auto data = prepare_datasets(series, cfg.H, cfg.U);
    Rng rng(cfg.seed);
    Model model(cfg, rng);
    std::cout << variant_name(cfg.variant) << ": " << model.parameter_count() << " parameters, "
              << data.train.size() << " train / " << data.val.size() << " val / "
              << data.test.size() << " test windows\n";

    auto rep = fit(model, data, rng, [](const EpochStats& e) {
        std::cout << "epoch " << e.epoch << "  loss " << e.train_loss << "  val mae " << e.val_mae
                  << '\n';
    });

    fs::create_directories(a.out);
    const fs::path out(a.out);
    save_checkpoint((out / "checkpoint.stwa").string(), model, data.norm);
    save_loss_curve((out / "loss_curve.csv").string(), rep);
    write_json_file((out / "report.json").string(),
                    report_json(rep, cfg, model.parameter_count(), data.train.size()));
    std::cout << "best epoch " << rep.best_epoch << "  val mae " << rep.best_val_mae
              << "  test mae " << rep.test.mae << '\n';
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, out;
};

inline int cmd_eval(const EvalArgs& a) {
    auto ck = load_checkpoint(a.checkpoint);
    SeriesStore series = load_csv(a.data);
    if (series.N != ck.cfg.N)
        throw ConfigError("checkpoint expects N=" + std::to_string(ck.cfg.N) + " sensors but '" +
                          a.data + "' has " + std::to_string(series.N));

    // Same chronology as training, and the checkpoint's normalization
    // statistics rather than a refit: evaluation must see the data the
    // way the trained model saw it.
    SplitStores splits = chronological_split(series);
    auto windows = make_windows(ck.norm.normalize(splits.test), ck.cfg.H, ck.cfg.U);
    Metrics m = dataset_metrics(*ck.model, windows, ck.norm);

    nlohmann::json j;
    j["checkpoint"] = a.checkpoint;
    j["variant"] = variant_name(ck.cfg.variant);
    j["split"] = "test";
    j["windows"] = windows.size();
    j["metrics"] = metrics_json(m);
    std::cout << j.dump(2) << '\n';
    if (!a.out.empty()) write_json_file(a.out, j);
    return 0;
}

struct BenchArgs {
    std::string out = "bench.csv";
    std::vector<std::string> variants;
    std::vector<std::size_t> horizons;
    std::size_t repeats = 5;
    std::optional<std::uint64_t> seed;
};

inline int cmd_bench(const BenchArgs& a) {
    BenchConfig bc;
    if (!a.variants.empty()) bc.variants = a.variants;
    if (!a.horizons.empty()) bc.horizons = a.horizons;
    bc.repeats = a.repeats;
    if (a.seed) bc.seed = *a.seed;
    auto rows = run_bench(bc);
    save_bench_csv(a.out, rows);
    for (const auto& r : rows) {
        std::cout << r.variant << " H=" << r.H;
        if (r.ok)
            std::cout << "  " << r.median_ms << " ms  " << r.scores << " scores\n";
        else
            std::cout << "  skipped: " << r.note << '\n';
    }
    std::cout << "wrote " << a.out << '\n';
    return 0;
}

struct SynthArgs {
    std::string out;
    std::size_t N = 8, T = 4032;
    std::uint64_t seed = 1;
    double noise = 0.1;
};

inline int cmd_synth(const SynthArgs& a) {
    SeriesStore s = synth_traffic(a.N, a.T, a.seed, a.noise);
    save_csv(s, a.out);
    std::cout << "wrote " << a.N << " sensors x " << a.T << " steps to " << a.out << '\n';
    return 0;
}

// ==================== entry point ====================

inline int run(int argc, char** argv) {
    CLI::App app{"spatio-temporal forecaster with window attention"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "fit a model and write a checkpoint");
    train->add_option("--config", train_args.config, "JSON config file (flat keys)");
    train->add_option("--data", train_args.data, "input series CSV")->required();
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--variant", train_args.variant, "model variant, overrides the config");
    train->add_option("--seed", train_args.seed, "RNG seed, overrides the config");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    eval->add_option("--data", eval_args.data, "input series CSV")->required();
    eval->add_option("--out", eval_args.out, "also write the metrics JSON here");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "forward-pass timing across horizons");
    bench->add_option("--out", bench_args.out, "output CSV path");
    bench->add_option("--variant", bench_args.variants, "variants to time (repeatable)");
    bench->add_option("--H", bench_args.horizons, "lookback horizons (repeatable)");
    bench->add_option("--repeats", bench_args.repeats, "timed passes per row");
    bench->add_option("--seed", bench_args.seed, "RNG seed");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic traffic CSV");
    synth->add_option("--out", synth_args.out, "output CSV path")->required();
    synth->add_option("--N", synth_args.N, "sensor count");
    synth->add_option("--T", synth_args.T, "time steps");
    synth->add_option("--seed", synth_args.seed, "RNG seed");
    synth->add_option("--noise", synth_args.noise, "noise level");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (bench->parsed()) return cmd_bench(bench_args);
        return cmd_synth(synth_args);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace stwa::cli
