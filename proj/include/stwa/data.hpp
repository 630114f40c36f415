#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "stwa/common.hpp"
#include "stwa/rng.hpp"
#include "stwa/tensor.hpp"

namespace stwa {

// ==================== series storage ====================

// N sensors observed at T aligned timestamps with F features each.
// CSV files carry F=1; the synthetic generator produces F=1 too.
struct SeriesStore {
    std::vector<std::string> sensor_ids;
    std::size_t N = 0, T = 0, F = 1;
    std::vector<double> values;  // [n][t][f] row-major
    int interval_minutes = 5;

    double at(std::size_t n, std::size_t t, std::size_t f = 0) const {
        return values[(n * T + t) * F + f];
    }
    double& at(std::size_t n, std::size_t t, std::size_t f = 0) {
        return values[(n * T + t) * F + f];
    }
};

// ==================== csv io ====================

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw IoError("failed to format value");
    return std::string(buf, p);
}

inline bool is_nan_token(const std::string& tok) {
    if (tok.empty()) return true;
    if (tok.size() != 3) return false;
    auto low = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
    return low(tok[0]) == 'n' && low(tok[1]) == 'a' && low(tok[2]) == 'n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// Header row holds the sensor ids; each following row is one timestamp.
// Empty cells and "NaN" are gaps, repaired per sensor by forward fill
// then backward fill.
inline SeriesStore load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file, expected a header row");
    SeriesStore store;
    store.sensor_ids = detail::split_csv_line(line);
    if (store.sensor_ids.empty() || (store.sensor_ids.size() == 1 && store.sensor_ids[0].empty()))
        throw ParseError(path + ": header row has no sensor ids");
    store.N = store.sensor_ids.size();
    store.F = 1;

    std::vector<std::vector<double>> rows;  // [t][n], NaN marks a gap
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != store.N)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(store.N) + " cells, got " +
                             std::to_string(cells.size()));
        std::vector<double> row(store.N);
        for (std::size_t n = 0; n < store.N; ++n) {
            const std::string& tok = cells[n];
            if (detail::is_nan_token(tok)) {
                row[n] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            double v = 0.0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || p != tok.data() + tok.size() || !std::isfinite(v))
                throw ParseError(path + ":" + std::to_string(lineno) + ": cell '" + tok +
                                 "' is not a finite number");
            row[n] = v;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");
    store.T = rows.size();
    store.values.assign(store.N * store.T, 0.0);
    for (std::size_t n = 0; n < store.N; ++n) {
        // forward fill, then backward fill for a leading gap run
        double last = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t t = 0; t < store.T; ++t) {
            double v = rows[t][n];
            if (std::isnan(v))
                v = last;
            else
                last = v;
            store.at(n, t) = v;
        }
        double next = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t t = store.T; t-- > 0;) {
            if (std::isnan(store.at(n, t)))
                store.at(n, t) = next;
            else
                next = store.at(n, t);
        }
        if (std::isnan(store.at(n, 0)))
            throw ParseError(path + ": sensor '" + store.sensor_ids[n] + "' has no values at all");
    }
    return store;
}

// Decimal point '.', separator ',', LF line endings, shortest
// round-trippable formatting. Same store in, identical bytes out.
inline void save_csv(const SeriesStore& store, const std::string& path) {
    if (store.F != 1) throw ValueError("save_csv: only single-feature stores are supported");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (std::size_t n = 0; n < store.N; ++n) {
        if (n) out << ',';
        out << store.sensor_ids[n];
    }
    out << '\n';
    for (std::size_t t = 0; t < store.T; ++t) {
        for (std::size_t n = 0; n < store.N; ++n) {
            if (n) out << ',';
            out << detail::fmt_double(store.at(n, t));
        }
        out << '\n';
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

// ==================== splits and windows ====================

struct SplitStores {
    SeriesStore train, val, test;
};

namespace detail {

inline SeriesStore take_range(const SeriesStore& s, std::size_t t0, std::size_t t1) {
    SeriesStore out;
    out.sensor_ids = s.sensor_ids;
    out.N = s.N;
    out.T = t1 - t0;
    out.F = s.F;
    out.interval_minutes = s.interval_minutes;
    out.values.resize(out.N * out.T * out.F);
    for (std::size_t n = 0; n < s.N; ++n)
        for (std::size_t t = t0; t < t1; ++t)
            for (std::size_t f = 0; f < s.F; ++f)
                out.values[(n * out.T + (t - t0)) * out.F + f] = s.values[(n * s.T + t) * s.F + f];
    return out;
}

}  // namespace detail

// Chronological 60/20/20 by timestamp. Windows are built per split, so
// no sample ever straddles a boundary.
inline SplitStores chronological_split(const SeriesStore& s, double train_ratio = 0.6,
                                       double val_ratio = 0.2) {
    if (train_ratio <= 0 || val_ratio < 0 || train_ratio + val_ratio >= 1.0)
        throw ConfigError("chronological_split: ratios " + std::to_string(train_ratio) + "/" +
                          std::to_string(val_ratio) + " do not leave room for a test split");
    const std::size_t t1 = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(s.T)));
    const std::size_t t2 =
        static_cast<std::size_t>(std::floor((train_ratio + val_ratio) * static_cast<double>(s.T)));
    return SplitStores{detail::take_range(s, 0, t1), detail::take_range(s, t1, t2),
                       detail::take_range(s, t2, s.T)};
}

// One (input window, target window) pair per start offset.
struct Sample {
    Tensor x;  // N x H x F
    Tensor y;  // N x U x F
};

inline std::vector<Sample> make_windows(const SeriesStore& s, std::size_t H, std::size_t U) {
    if (s.T < H + U)
        throw ConfigError("make_windows: split of length " + std::to_string(s.T) +
                          " is shorter than H+U=" + std::to_string(H + U));
    const std::size_t count = s.T - H - U + 1;
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t t0 = 0; t0 < count; ++t0) {
        Tensor x = zeros({s.N, H, s.F});
        Tensor y = zeros({s.N, U, s.F});
        for (std::size_t n = 0; n < s.N; ++n) {
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t f = 0; f < s.F; ++f)
                    (*x.data)[(n * H + h) * s.F + f] = s.values[(n * s.T + t0 + h) * s.F + f];
            for (std::size_t u = 0; u < U; ++u)
                for (std::size_t f = 0; f < s.F; ++f)
                    (*y.data)[(n * U + u) * s.F + f] = s.values[(n * s.T + t0 + H + u) * s.F + f];
        }
        out.push_back(Sample{std::move(x), std::move(y)});
    }
    return out;
}

// ==================== normalization ====================

// Per-sensor z-score. Statistics come from the training split only;
// normalizing anything before fit() is an error.
class Normalizer {
public:
    static constexpr double kStdFloor = 1e-8;

    void fit(const SeriesStore& train) {
        mean_.assign(train.N, 0.0);
        std_.assign(train.N, 0.0);
        const double cnt = static_cast<double>(train.T * train.F);
        if (cnt == 0) throw ConfigError("Normalizer::fit: empty training split");
        for (std::size_t n = 0; n < train.N; ++n) {
            double m = 0.0;
            for (std::size_t t = 0; t < train.T; ++t)
                for (std::size_t f = 0; f < train.F; ++f) m += train.at(n, t, f);
            m /= cnt;
            double var = 0.0;
            for (std::size_t t = 0; t < train.T; ++t)
                for (std::size_t f = 0; f < train.F; ++f) {
                    const double d = train.at(n, t, f) - m;
                    var += d * d;
                }
            mean_[n] = m;
            std_[n] = std::max(std::sqrt(var / cnt), kStdFloor);
        }
        fitted_ = true;
    }

    bool fitted() const { return fitted_; }

    SeriesStore normalize(const SeriesStore& s) const {
        require_fitted("normalize");
        require_width(s);
        SeriesStore out = s;
        for (std::size_t n = 0; n < s.N; ++n)
            for (std::size_t t = 0; t < s.T; ++t)
                for (std::size_t f = 0; f < s.F; ++f)
                    out.at(n, t, f) = (s.at(n, t, f) - mean_[n]) / std_[n];
        return out;
    }

    SeriesStore denormalize(const SeriesStore& s) const {
        require_fitted("denormalize");
        require_width(s);
        SeriesStore out = s;
        for (std::size_t n = 0; n < s.N; ++n)
            for (std::size_t t = 0; t < s.T; ++t)
                for (std::size_t f = 0; f < s.F; ++f)
                    out.at(n, t, f) = s.at(n, t, f) * std_[n] + mean_[n];
        return out;
    }

    double denorm_value(std::size_t sensor, double v) const {
        require_fitted("denorm_value");
        return v * std_[sensor] + mean_[sensor];
    }

    const std::vector<double>& means() const { return mean_; }
    const std::vector<double>& stds() const { return std_; }

    void restore(std::vector<double> means, std::vector<double> stds) {
        if (means.size() != stds.size())
            throw ValueError("Normalizer::restore: mean/std length mismatch");
        mean_ = std::move(means);
        std_ = std::move(stds);
        fitted_ = !mean_.empty();
    }

private:
    void require_fitted(const char* op) const {
        if (!fitted_)
            throw ValueError(std::string("Normalizer::") + op + ": fit() has not been called");
    }
    void require_width(const SeriesStore& s) const {
        if (s.N != mean_.size())
            throw ValueError("Normalizer: store has " + std::to_string(s.N) +
                             " sensors, statistics cover " + std::to_string(mean_.size()));
    }

    std::vector<double> mean_, std_;
    bool fitted_ = false;
};

// ==================== synthetic traffic ====================

// Daily sinusoid with sensor-specific phase, amplitude and a second
// harmonic, modulated by a weekday/weekend square wave, plus Gaussian
// noise. 5-minute ticks: 288 per day, 2016 per week.
inline SeriesStore synth_traffic(std::size_t N, std::size_t T, std::uint64_t seed,
                                 double noise_level = 0.1) {
    if (N == 0 || T == 0) throw ConfigError("synth_traffic: N and T must be positive");
    constexpr std::size_t kDay = 288;
    constexpr double kTau = 6.283185307179586476925286766559;
    Rng rng(seed);
    SeriesStore s;
    s.N = N;
    s.T = T;
    s.F = 1;
    s.interval_minutes = 5;
    s.values.assign(N * T, 0.0);
    std::vector<double> base(N), amp(N), amp2(N), phase(N);
    for (std::size_t n = 0; n < N; ++n) {
        base[n] = 100.0 + 15.0 * static_cast<double>(n) + 5.0 * rng.uniform();
        amp[n] = 35.0 + 20.0 * rng.uniform();
        amp2[n] = 5.0 + 10.0 * rng.uniform();
        phase[n] = kTau * static_cast<double>(n) / static_cast<double>(N) +
                   0.3 * rng.uniform(-1.0, 1.0);
        s.sensor_ids.push_back("s" + std::to_string(n));
    }
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < T; ++t) {
            const double theta = kTau * static_cast<double>(t % kDay) / static_cast<double>(kDay);
            const std::size_t day = (t / kDay) % 7;
            const double week = day < 5 ? 1.0 : 0.6;  // square-wave weekend dip
            double v = base[n] + week * (amp[n] * std::sin(theta + phase[n]) +
                                         amp2[n] * std::sin(2.0 * theta + 2.0 * phase[n]));
            v += noise_level * amp[n] * rng.normal();
            s.at(n, t) = v;
        }
    }
    return s;
}

// ==================== assembled datasets ====================

struct PreparedData {
    Normalizer norm;
    std::vector<Sample> train, val, test;
    std::size_t N = 0, F = 1;
};

inline PreparedData prepare_datasets(const SeriesStore& store, std::size_t H, std::size_t U) {
    SplitStores splits = chronological_split(store);
    PreparedData d;
    d.N = store.N;
    d.F = store.F;
    d.norm.fit(splits.train);
    d.train = make_windows(d.norm.normalize(splits.train), H, U);
    d.val = make_windows(d.norm.normalize(splits.val), H, U);
    d.test = make_windows(d.norm.normalize(splits.test), H, U);
    return d;
}

}  // namespace stwa
