#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stwa/params.hpp"
#include "stwa/tensor.hpp"

namespace stwa {

// Latent-driven weight generation: each sensor owns a location latent,
// a small encoder summarizes its recent window into a time-varying
// latent, and a decoder maps their sum to that sensor's projection
// matrices for the attention layers.

// ==================== sampling and divergence ====================

// Reparameterized draw: mu + exp(0.5 * logvar) * eps. With eps = 0 the
// draw collapses to the mean exactly, which is the evaluation mode.
inline Tensor sample_gaussian(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
    detail::require_same_shape(mu, logvar, "sample_gaussian");
    detail::require_same_shape(mu, eps, "sample_gaussian");
    return add(mu, mul(exp_t(scale(logvar, 0.5)), eps));
}

// KL(N(mu, diag(exp(logvar))) || N(0, I)) for per-sensor rows, averaged
// over the leading axis: 0.5 * sum(exp(lv) + mu^2 - 1 - lv) / rows.
inline Tensor kl_std_normal(const Tensor& mu, const Tensor& logvar) {
    detail::require_same_shape(mu, logvar, "kl_std_normal");
    if (mu.rank() == 0 || mu.shape[0] == 0) throw ValueError("kl_std_normal: empty input");
    Tensor term = sub(add(exp_t(logvar), mul(mu, mu)), add_scalar(logvar, 1.0));
    return scale(sum_all(term), 0.5 / static_cast<double>(mu.shape[0]));
}

// Divergence of the summed latent. The two draws are independent, so
// the sum is Gaussian with added means and added variances.
inline Tensor kl_sum_std_normal(const Tensor& mu_a, const Tensor& logvar_a, const Tensor& mu_b,
                                const Tensor& logvar_b) {
    Tensor mu = add(mu_a, mu_b);
    Tensor var = add(exp_t(logvar_a), exp_t(logvar_b));
    return kl_std_normal(mu, log_t(var));
}

// ==================== per-sensor location latents ====================

struct SpatialLatent {
    std::size_t N = 0, k = 0;
    bool stochastic = true;
    std::size_t i_mu = 0;
    std::size_t i_logvar = 0;  // unused when deterministic

    SpatialLatent() = default;

    SpatialLatent(ParamStore& store, const std::string& prefix, std::size_t N_, std::size_t k_,
                  bool stochastic_, Rng& rng)
        : N(N_), k(k_), stochastic(stochastic_) {
        i_mu = store.add(prefix + ".mu", init_weight({N, k}, k, rng));
        if (stochastic)
            // start tight around the means so early draws do not swamp them
            i_logvar = store.add(prefix + ".logvar", full({N, k}, -2.0));
    }

    Tensor mu(BoundParams& bp) const { return bp[i_mu]; }
    Tensor logvar(BoundParams& bp) const {
        if (!stochastic) throw ValueError("SpatialLatent: deterministic latent has no logvar");
        return bp[i_logvar];
    }

    // eps: N x k noise, or mean when not stochastic
    Tensor sample(BoundParams& bp, const Tensor& eps) const {
        if (!stochastic) return bp[i_mu];
        return sample_gaussian(bp[i_mu], bp[i_logvar], eps);
    }
};

// ==================== recent-window encoder ====================

// Three fully connected layers from the flattened normalized window to
// the temporal latent's mean and log-variance (mean only when the model
// runs deterministically).
struct TemporalEncoder {
    std::size_t in_width = 0, k = 0;
    bool stochastic = true;
    std::size_t i_W1 = 0, i_b1 = 0, i_W2 = 0, i_b2 = 0, i_W3 = 0, i_b3 = 0;

    TemporalEncoder() = default;

    TemporalEncoder(ParamStore& store, const std::string& prefix, std::size_t in_width_,
                    std::size_t k_, std::size_t h1, std::size_t h2, bool stochastic_, Rng& rng)
        : in_width(in_width_), k(k_), stochastic(stochastic_) {
        const std::size_t out = stochastic ? 2 * k : k;
        i_W1 = store.add(prefix + ".W1", init_weight({in_width, h1}, in_width, rng));
        i_b1 = store.add(prefix + ".b1", zeros({h1}));
        i_W2 = store.add(prefix + ".W2", init_weight({h1, h2}, h1, rng));
        i_b2 = store.add(prefix + ".b2", zeros({h2}));
        i_W3 = store.add(prefix + ".W3", init_weight({h2, out}, h2, rng));
        i_b3 = store.add(prefix + ".b3", zeros({out}));
    }

    struct Out {
        Tensor mu;                    // N x k
        std::optional<Tensor> logvar; // N x k when stochastic
    };

    // x_recent: N x in_width (flattened normalized input windows)
    Out forward(BoundParams& bp, const Tensor& x_recent) const {
        if (x_recent.rank() != 2 || x_recent.cols() != in_width)
            throw ValueError("TemporalEncoder: expected N x " + std::to_string(in_width) +
                             ", got " + shape_str(x_recent.shape));
        Tensor h = relu(add_bias(matmul(x_recent, bp[i_W1]), bp[i_b1]));
        h = relu(add_bias(matmul(h, bp[i_W2]), bp[i_b2]));
        Tensor o = add_bias(matmul(h, bp[i_W3]), bp[i_b3]);
        Out out;
        out.mu = slice_cols(o, 0, k);
        if (stochastic) out.logvar = slice_cols(o, k, k);
        return out;
    }
};

// ==================== latent-to-matrix decoder ====================

// Per-sensor projection matrices produced from the combined latent.
struct GeneratedParams {
    std::vector<Tensor> K, V;    // per sensor, d_in x d
    std::vector<Tensor> T1, T2;  // per sensor, d x d; only when generated
};

// Three fully connected layers from the k-dim latent to a flat block of
// matrix entries per sensor: K and V always, the two correlation
// transforms too when asked.
struct ParamDecoder {
    std::size_t k = 0, d = 0;
    bool with_correlation = false;
    std::size_t i_W1 = 0, i_b1 = 0, i_W2 = 0, i_b2 = 0, i_W3 = 0, i_b3 = 0;

    ParamDecoder() = default;

    ParamDecoder(ParamStore& store, const std::string& prefix, std::size_t k_, std::size_t d_,
                 std::size_t h1, std::size_t h2, bool with_correlation_, Rng& rng)
        : k(k_), d(d_), with_correlation(with_correlation_) {
        const std::size_t out = (with_correlation ? 4 : 2) * d * d;
        i_W1 = store.add(prefix + ".W1", init_weight({k, h1}, k, rng));
        i_b1 = store.add(prefix + ".b1", zeros({h1}));
        i_W2 = store.add(prefix + ".W2", init_weight({h1, h2}, h1, rng));
        i_b2 = store.add(prefix + ".b2", zeros({h2}));
        i_W3 = store.add(prefix + ".W3", init_weight({h2, out}, h2, rng));
        i_b3 = store.add(prefix + ".b3", zeros({out}));
    }

    // theta: N x k -> per-sensor matrices
    GeneratedParams decode(BoundParams& bp, const Tensor& theta) const {
        if (theta.rank() != 2 || theta.cols() != k)
            throw ValueError("ParamDecoder: expected N x " + std::to_string(k) + ", got " +
                             shape_str(theta.shape));
        const std::size_t N = theta.rows();
        Tensor h = relu(add_bias(matmul(theta, bp[i_W1]), bp[i_b1]));
        h = relu(add_bias(matmul(h, bp[i_W2]), bp[i_b2]));
        Tensor flat = add_bias(matmul(h, bp[i_W3]), bp[i_b3]);  // N x out
        const std::size_t block = d * d;
        GeneratedParams gp;
        for (std::size_t n = 0; n < N; ++n) {
            Tensor row = slice_rows(flat, n, 1);
            gp.K.push_back(reshape(slice_cols(row, 0, block), {d, d}));
            gp.V.push_back(reshape(slice_cols(row, block, block), {d, d}));
            if (with_correlation) {
                gp.T1.push_back(reshape(slice_cols(row, 2 * block, block), {d, d}));
                gp.T2.push_back(reshape(slice_cols(row, 3 * block, block), {d, d}));
            }
        }
        return gp;
    }
};

}  // namespace stwa
