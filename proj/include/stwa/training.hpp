#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "stwa/data.hpp"
#include "stwa/model.hpp"
#include "stwa/params.hpp"
#include "stwa/tensor.hpp"

namespace stwa {

// ==================== loss ====================

// Mean elementwise Huber: quadratic inside |e| <= delta, linear with
// matched value and slope outside. Gradients flow into both operands
// when they are on a tape.
inline Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta) {
    detail::require_same_shape(pred, target, "huber_loss");
    if (delta <= 0) throw ValueError("huber_loss: delta must be positive");
    const std::size_t n = pred.numel();
    if (n == 0) throw ValueError("huber_loss: empty input");
    const double* p = pred.data->data();
    const double* t = target.data->data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = p[i] - t[i];
        const double ae = std::abs(e);
        acc += ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
    }
    Tensor out = scalar(acc / static_cast<double>(n));
    if (Tape* tp = detail::common_tape({&pred, &target})) {
        out.tape = tp;
        const int np = pred.node, nt = target.node;
        Buffer pb = pred.data, tb = target.data;
        out.node = tp->record(1, [np, nt, pb, tb, n, delta](const double* g, Tape& tape) {
            const double s = g[0] / static_cast<double>(n);
            double* gp = np >= 0 ? tape.grad_buffer(np, n) : nullptr;
            double* gt = nt >= 0 ? tape.grad_buffer(nt, n) : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = (*pb)[i] - (*tb)[i];
                const double d = s * std::clamp(e, -delta, delta);
                if (gp) gp[i] += d;
                if (gt) gt[i] -= d;
            }
        });
    }
    return out;
}

// ==================== metrics ====================

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    // percent; absent when every target falls under the mask
    std::optional<double> mape;
};

inline constexpr double kMapeMask = 1e-3;

inline Metrics compute_metrics(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size())
        throw ValueError("compute_metrics: size mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(target.size()));
    if (pred.empty()) throw ValueError("compute_metrics: empty input");
    double sa = 0.0, sq = 0.0, sp = 0.0;
    std::size_t np = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        sa += std::abs(e);
        sq += e * e;
        if (std::abs(target[i]) > kMapeMask) {
            sp += std::abs(e / target[i]);
            ++np;
        }
    }
    Metrics m;
    m.mae = sa / static_cast<double>(pred.size());
    m.rmse = std::sqrt(sq / static_cast<double>(pred.size()));
    if (np) m.mape = 100.0 * sp / static_cast<double>(np);
    return m;
}

// ==================== optimizer ====================

class Adam {
public:
    Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8, double clip_norm = 0.0)
        : store_(store), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), clip_(clip_norm) {
        m_.reserve(store.count());
        v_.reserve(store.count());
        for (std::size_t i = 0; i < store.count(); ++i) {
            m_.emplace_back(store.at(i).value.numel(), 0.0);
            v_.emplace_back(store.at(i).value.numel(), 0.0);
        }
    }

    void step(BoundParams& bp) {
        ++t_;
        std::vector<Tensor> grads;
        grads.reserve(m_.size());
        double sq = 0.0;
        for (std::size_t i = 0; i < m_.size(); ++i) {
            grads.push_back(bp.grad(i));
            for (double g : *grads.back().data) {
                if (!std::isfinite(g))
                    throw ValueError("Adam: non-finite gradient for '" + store_.at(i).name + "'");
                sq += g * g;
            }
        }
        last_norm_ = std::sqrt(sq);
        double scale = 1.0;
        if (clip_ > 0.0 && last_norm_ > clip_) scale = clip_ / last_norm_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < m_.size(); ++i) {
            const double* g = grads[i].data->data();
            double* th = store_.at(i).value.data->data();
            double* m = m_[i].data();
            double* v = v_[i].data();
            for (std::size_t j = 0; j < m_[i].size(); ++j) {
                const double gj = g[j] * scale;
                m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
                v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
                th[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
            }
        }
    }

    std::size_t steps() const { return t_; }
    double last_grad_norm() const { return last_norm_; }

private:
    ParamStore& store_;
    double lr_, b1_, b2_, eps_, clip_;
    std::size_t t_ = 0;
    double last_norm_ = 0.0;
    std::vector<std::vector<double>> m_, v_;
};

// ==================== early stopping ====================

class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    // strict improvement only; resets the stall counter
    bool improved(double val) {
        if (val < best_) {
            best_ = val;
            since_ = 0;
            return true;
        }
        ++since_;
        return false;
    }

    bool should_stop() const { return since_ >= patience_; }
    double best() const { return best_; }

private:
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t since_ = 0;
    std::size_t patience_;
};

// ==================== parameter snapshots ====================

inline std::vector<std::vector<double>> snapshot_params(const ParamStore& store) {
    std::vector<std::vector<double>> snap;
    snap.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) snap.push_back(*store.at(i).value.data);
    return snap;
}

inline void restore_params(ParamStore& store, const std::vector<std::vector<double>>& snap) {
    if (snap.size() != store.count())
        throw ValueError("restore_params: snapshot has " + std::to_string(snap.size()) +
                         " entries for " + std::to_string(store.count()) + " parameters");
    for (std::size_t i = 0; i < snap.size(); ++i) {
        auto& dst = *store.at(i).value.data;
        if (snap[i].size() != dst.size())
            throw ValueError("restore_params: size mismatch for '" + store.at(i).name + "'");
        dst = snap[i];
    }
}

// ==================== evaluation ====================

inline Tensor eval_prediction(Model& model, const Tensor& x) {
    BoundParams bp(model.params(), nullptr);
    return model.forward(x, bp).pred;
}

// denormalized metrics of the mean prediction over a window set
inline Metrics dataset_metrics(Model& model, const std::vector<Sample>& set,
                               const Normalizer& norm) {
    if (set.empty()) throw ValueError("dataset_metrics: empty window set");
    const auto& cfg = model.config();
    std::vector<double> ph, th;
    ph.reserve(set.size() * cfg.N * cfg.U * cfg.F);
    th.reserve(ph.capacity());
    for (const Sample& s : set) {
        Tensor pred = eval_prediction(model, s.x);
        const double* pv = pred.data->data();
        const double* tv = s.y.data->data();
        for (std::size_t n = 0; n < cfg.N; ++n)
            for (std::size_t j = 0; j < cfg.U * cfg.F; ++j) {
                const std::size_t idx = n * cfg.U * cfg.F + j;
                ph.push_back(norm.denorm_value(n, pv[idx]));
                th.push_back(norm.denorm_value(n, tv[idx]));
            }
    }
    return compute_metrics(ph, th);
}

// ==================== training loop ====================

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_mae = 0.0;
    double val_rmse = 0.0;
    double val_mape = 0.0;  // NaN when undefined
    double seconds = 0.0;   // wall clock, training plus validation
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_mae = std::numeric_limits<double>::infinity();
    Metrics test;
    double train_seconds = 0.0;  // optimizer work only
    double total_seconds = 0.0;
};

inline TrainReport fit(Model& model, const PreparedData& data, Rng& rng,
                       const std::function<void(const EpochStats&)>& on_epoch = {}) {
    const auto& cfg = model.config();
    if (data.train.empty() || data.val.empty() || data.test.empty())
        throw ValueError("fit: every split needs at least one window");
    using clock = std::chrono::steady_clock;
    const auto secs = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
    };

    Adam opt(model.params(), cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm);
    EarlyStopper stopper(cfg.patience);
    TrainReport rep;
    std::vector<std::vector<double>> best;
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const bool draw_s = cfg.stochastic();
    const bool draw_t = cfg.stochastic() && cfg.uses_temporal();

    const auto t_start = clock::now();
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t_epoch = clock::now();
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t B = std::min(cfg.batch, order.size() - start);
            Tape tape;
            BoundParams bp(model.params(), &tape);
            Tensor hub, kl;
            for (std::size_t s = 0; s < B; ++s) {
                const Sample& smp = data.train[order[start + s]];
                Tensor es, et;
                if (draw_s) es = normal({cfg.N, cfg.k}, rng);
                if (draw_t) et = normal({cfg.N, cfg.k}, rng);
                auto out = model.forward(smp.x, bp, draw_s ? &es : nullptr,
                                         draw_t ? &et : nullptr);
                Tensor h = huber_loss(out.pred, smp.y, cfg.huber_delta);
                hub = s == 0 ? h : add(hub, h);
                if (cfg.has_kl()) kl = s == 0 ? out.kl : add(kl, out.kl);
            }
            Tensor loss = scale(hub, 1.0 / static_cast<double>(B));
            if (cfg.has_kl())
                loss = add(loss, scale(kl, cfg.alpha / static_cast<double>(B)));
            tape.backward(loss);
            opt.step(bp);
            loss_sum += loss.val(0) * static_cast<double>(B);
        }
        rep.train_seconds += secs(t_epoch, clock::now());

        Metrics vm = dataset_metrics(model, data.val, data.norm);
        EpochStats es;
        es.epoch = epoch;
        es.train_loss = loss_sum / static_cast<double>(order.size());
        es.val_mae = vm.mae;
        es.val_rmse = vm.rmse;
        es.val_mape = vm.mape.value_or(std::numeric_limits<double>::quiet_NaN());
        es.seconds = secs(t_epoch, clock::now());
        rep.epochs.push_back(es);
        if (stopper.improved(vm.mae)) {
            rep.best_epoch = epoch;
            rep.best_val_mae = vm.mae;
            best = snapshot_params(model.params());
        }
        if (on_epoch) on_epoch(es);
        if (stopper.should_stop()) break;
    }
    if (!best.empty()) restore_params(model.params(), best);
    rep.test = dataset_metrics(model, data.test, data.norm);
    rep.total_seconds = secs(t_start, clock::now());
    return rep;
}

// One row per epoch. Timing stays out of this file on purpose: fixed
// seeds must reproduce it byte for byte, and wall clock never repeats.
// Per-epoch seconds live in the run report instead.
inline void save_loss_curve(const std::string& path, const TrainReport& rep) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "epoch,train_loss,val_mae,val_rmse,val_mape\n";
    for (const auto& e : rep.epochs)
        f << e.epoch << ',' << detail::fmt_double(e.train_loss) << ','
          << detail::fmt_double(e.val_mae) << ',' << detail::fmt_double(e.val_rmse) << ','
          << detail::fmt_double(e.val_mape) << '\n';
    if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace stwa
