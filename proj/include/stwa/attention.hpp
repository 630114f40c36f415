#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stwa/params.hpp"
#include "stwa/tensor.hpp"

namespace stwa {

// Score-entry counters, filled during forward passes. temporal covers
// the per-sensor sequence attention (the part whose growth in H the
// bench compares); correlation covers the cross-sensor mixing, which is
// identical across variants.
struct AttentionCost {
    std::uint64_t temporal_scores = 0;
    std::uint64_t correlation_scores = 0;
};

namespace detail {

// Shared core: softmax(q . k^T / sqrt(d_head)) . v with the feature
// axis split into heads. q: m x d, k/v: t x d, result m x d.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                             std::size_t heads, AttentionCost* cost) {
    require_2d(q, "attention");
    require_2d(k, "attention");
    require_2d(v, "attention");
    const std::size_t d = q.cols();
    if (k.cols() != d || v.cols() != d)
        throw ValueError("attention: feature widths differ, " + shape_str(q.shape) + " / " +
                         shape_str(k.shape) + " / " + shape_str(v.shape));
    if (k.rows() != v.rows())
        throw ValueError("attention: key/value token counts differ, " + shape_str(k.shape) +
                         " vs " + shape_str(v.shape));
    if (heads == 0 || d % heads != 0)
        throw ValueError("attention: heads=" + std::to_string(heads) +
                         " does not divide width " + std::to_string(d));
    if (cost) cost->temporal_scores += static_cast<std::uint64_t>(heads) * q.rows() * k.rows();
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    if (heads == 1) {
        Tensor scores = softmax_lastdim(scale(matmul_nt(q, k), inv_sqrt));
        return matmul(scores, v);
    }
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = softmax_lastdim(scale(matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(matmul(scores, vh));
    }
    return concat_cols(outs);
}

}  // namespace detail

// Canonical self-attention for one sensor's sequence: every token
// queries every token, t^2 score entries per head.
inline Tensor canonical_attention(const Tensor& xQ, const Tensor& xK, const Tensor& xV,
                                  std::size_t heads = 1, AttentionCost* cost = nullptr) {
    return detail::attention_core(xQ, xK, xV, heads, cost);
}

// Window attention for one sensor and one window: p learned proxies
// query the S tokens inside the window, p*S score entries per head.
inline Tensor proxy_attention(const Tensor& P, const Tensor& xKw, const Tensor& xVw,
                              std::size_t heads = 1, AttentionCost* cost = nullptr) {
    return detail::attention_core(P, xKw, xVw, heads, cost);
}

// ==================== proxy weighting ====================

// Two-layer gate over all p proxy outputs of a window jointly:
// sigmoid(W2 . tanh(W1 . flatten(h))), reshaped back to p x d. Shared
// across windows and sensors within a layer.
struct WeightingNetwork {
    std::size_t p = 0, d = 0;
    std::size_t i_W1 = 0, i_W2 = 0;

    WeightingNetwork() = default;

    WeightingNetwork(ParamStore& store, const std::string& prefix, std::size_t p_, std::size_t d_,
                     Rng& rng)
        : p(p_), d(d_) {
        const std::size_t w = p * d;
        i_W1 = store.add(prefix + ".W1", init_weight({w, w}, w, rng));
        i_W2 = store.add(prefix + ".W2", init_weight({w, w}, w, rng));
    }

    // h: p x d proxy outputs -> p x d weights in (0, 1)
    Tensor forward(BoundParams& bp, const Tensor& h) const {
        if (h.shape != Shape{p, d})
            throw ValueError("WeightingNetwork: expected " + shape_str({p, d}) + ", got " +
                             shape_str(h.shape));
        Tensor flat = reshape(h, {1, p * d});
        Tensor a = sigmoid_t(matmul(tanh_t(matmul(flat, bp[i_W1])), bp[i_W2]));
        return reshape(a, {p, d});
    }
};

// weights ⊙ outputs summed over the proxy axis -> 1 x d
inline Tensor aggregate_weighted(const Tensor& weights, const Tensor& h) {
    detail::require_same_shape(weights, h, "aggregate_weighted");
    return sum_rows(mul(weights, h));
}

// plain mean over proxies, the fixed-weight ablation
inline Tensor aggregate_mean(const Tensor& h) {
    return scale(sum_rows(h), 1.0 / static_cast<double>(h.rows()));
}

// ==================== recurrent proxy fusion ====================

// Carries the previous window's aggregated output into this window's
// proxies: one linear layer on [h_prev || P_j] per proxy, 2d -> d.
struct FusionNetwork {
    std::size_t d = 0;
    std::size_t i_W = 0, i_b = 0;

    FusionNetwork() = default;

    FusionNetwork(ParamStore& store, const std::string& prefix, std::size_t d_, Rng& rng) : d(d_) {
        i_W = store.add(prefix + ".W", init_weight({2 * d, d}, 2 * d, rng));
        i_b = store.add(prefix + ".b", zeros({d}));
    }

    // h_prev: 1 x d (zeros before the first window), P: p x d
    Tensor forward(BoundParams& bp, const Tensor& h_prev, const Tensor& P) const {
        if (h_prev.shape != Shape{1, d})
            throw ValueError("FusionNetwork: h_prev must be 1x" + std::to_string(d) + ", got " +
                             shape_str(h_prev.shape));
        if (P.rank() != 2 || P.cols() != d)
            throw ValueError("FusionNetwork: proxies must be p x " + std::to_string(d) +
                             ", got " + shape_str(P.shape));
        Tensor joined = concat_cols({repeat_rows(h_prev, P.rows()), P});
        return add_bias(matmul(joined, bp[i_W]), bp[i_b]);
    }
};

// ==================== cross-sensor attention ====================

// Correlates the sensors' aggregated window outputs: row i of the
// result is a B(i, :)-weighted sum of all sensors' vectors, where
// B = softmax over the embedded compatibilities. T1/T2 are shared d x d
// transforms here; the per-sensor overload takes generated ones.
inline Tensor sensor_correlation(const Tensor& h, const Tensor& T1, const Tensor& T2,
                                 AttentionCost* cost = nullptr) {
    detail::require_2d(h, "sensor_correlation");
    const std::size_t N = h.rows();
    if (cost) cost->correlation_scores += static_cast<std::uint64_t>(N) * N;
    Tensor u = matmul(h, T1);
    Tensor v = matmul(h, T2);
    Tensor B = softmax_lastdim(matmul_nt(u, v));
    return matmul(B, h);
}

inline Tensor sensor_correlation(const Tensor& h, const std::vector<Tensor>& T1,
                                 const std::vector<Tensor>& T2, AttentionCost* cost = nullptr) {
    detail::require_2d(h, "sensor_correlation");
    const std::size_t N = h.rows();
    if (T1.size() != N || T2.size() != N)
        throw ValueError("sensor_correlation: need one transform pair per sensor, got " +
                         std::to_string(T1.size()) + "/" + std::to_string(T2.size()) + " for " +
                         std::to_string(N));
    if (cost) cost->correlation_scores += static_cast<std::uint64_t>(N) * N;
    std::vector<Tensor> urows, vrows;
    urows.reserve(N);
    vrows.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
        Tensor row = slice_rows(h, i, 1);
        urows.push_back(matmul(row, T1[i]));
        vrows.push_back(matmul(row, T2[i]));
    }
    Tensor u = concat_rows(urows);
    Tensor v = concat_rows(vrows);
    Tensor B = softmax_lastdim(matmul_nt(u, v));
    return matmul(B, h);
}

}  // namespace stwa
