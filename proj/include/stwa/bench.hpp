#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "stwa/data.hpp"
#include "stwa/model.hpp"

namespace stwa {

struct BenchConfig {
    std::vector<std::string> variants = {"SA", "WA", "ST-WA"};
    std::vector<std::size_t> horizons = {12, 24, 48, 96};
    std::size_t repeats = 5;
    std::size_t N = 8, d = 16;
    std::vector<std::size_t> S = {3, 2, 2};
    std::uint64_t seed = 1;
};

struct BenchRow {
    std::string variant;
    std::size_t H = 0;
    bool ok = false;
    double median_ms = 0.0;
    std::uint64_t scores = 0;      // measured attention score entries per forward
    std::uint64_t analytic = 0;    // the closed-form count for the same setup
    std::size_t params = 0;
    std::uint64_t peak_bytes = 0;  // peak live tensor bytes over one forward
    std::string note;              // skip reason when not ok
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Forward-only timing in evaluation mode: no tape, no noise. One
// warm-up pass, then the median over `repeats` timed passes.
inline std::vector<BenchRow> run_bench(const BenchConfig& bc) {
    if (bc.repeats == 0) throw ConfigError("bench: repeats must be positive");
    if (bc.variants.empty() || bc.horizons.empty())
        throw ConfigError("bench: needs at least one variant and one horizon");
    using clock = std::chrono::steady_clock;

    // sorted by (variant, H) so downstream diffs stay stable
    std::vector<std::string> variants = bc.variants;
    std::sort(variants.begin(), variants.end());
    variants.erase(std::unique(variants.begin(), variants.end()), variants.end());
    std::vector<std::size_t> horizons = bc.horizons;
    std::sort(horizons.begin(), horizons.end());
    horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());

    std::vector<BenchRow> rows;
    for (const auto& vname : variants) {
        const Variant v = parse_variant(vname);
        for (std::size_t H : horizons) {
            BenchRow row;
            row.variant = vname;
            row.H = H;
            ModelConfig cfg;
            cfg.variant = v;
            cfg.N = bc.N;
            cfg.d = bc.d;
            cfg.H = H;
            cfg.U = 12;  // fixed so only the lookback horizon scales
            cfg.S = bc.S;
            cfg.L = bc.S.size();
            cfg.seed = bc.seed;
            try {
                cfg.validate();
            } catch (const ConfigError& e) {
                row.note = e.what();
                rows.push_back(std::move(row));
                continue;
            }
            Rng rng(bc.seed);
            Model model(cfg, rng);
            Tensor x = normal({cfg.N, cfg.H, cfg.F}, rng);
            BoundParams bp(model.params(), nullptr);

            auto out = model.forward(x, bp);  // warm-up, and the score count
            row.scores = out.cost.temporal_scores;
            auto sc = Model::count_scores(cfg);
            row.analytic = v == Variant::SA ? sc.canonical_total : sc.window_total;
            row.params = model.parameter_count();

            mem::reset_peak();
            std::vector<double> times;
            times.reserve(bc.repeats);
            for (std::size_t r = 0; r < bc.repeats; ++r) {
                const auto t0 = clock::now();
                model.forward(x, bp);
                const auto t1 = clock::now();
                times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            row.peak_bytes = mem::peak_bytes;
            row.median_ms = detail::median_of(std::move(times));
            row.ok = true;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline void save_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "variant,H,status,median_ms,scores,analytic_scores,params,peak_bytes,note\n";
    for (const auto& r : rows) {
        f << r.variant << ',' << r.H << ',' << (r.ok ? "ok" : "skipped") << ','
          << detail::fmt_double(r.median_ms) << ',' << r.scores << ',' << r.analytic << ','
          << r.params << ',' << r.peak_bytes << ',';
        // commas inside the reason would shift the columns
        std::string note = r.note;
        std::replace(note.begin(), note.end(), ',', ';');
        f << note << '\n';
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace stwa
