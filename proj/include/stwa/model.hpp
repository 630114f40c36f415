#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stwa/attention.hpp"
#include "stwa/params.hpp"
#include "stwa/stgen.hpp"
#include "stwa/tensor.hpp"

namespace stwa {

// ==================== configuration ====================

// SA        canonical self-attention, shared static projections
// WA-1      one window-attention layer, static projections
// WA        stacked window attention, static projections
// S-WA      window attention, projections generated from location latents
// ST-WA     projections generated from location + time-varying latents
// ST-WA-det ST-WA with the latents made deterministic and no divergence term
enum class Variant { SA, WA1, WA, SWA, STWA, STWA_DET };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::SA: return "SA";
        case Variant::WA1: return "WA-1";
        case Variant::WA: return "WA";
        case Variant::SWA: return "S-WA";
        case Variant::STWA: return "ST-WA";
        case Variant::STWA_DET: return "ST-WA-det";
    }
    return "?";
}

inline const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names = {"SA", "WA-1", "WA", "S-WA", "ST-WA", "ST-WA-det"};
    return names;
}

inline Variant parse_variant(const std::string& s) {
    if (s == "SA") return Variant::SA;
    if (s == "WA-1") return Variant::WA1;
    if (s == "WA") return Variant::WA;
    if (s == "S-WA") return Variant::SWA;
    if (s == "ST-WA") return Variant::STWA;
    if (s == "ST-WA-det") return Variant::STWA_DET;
    std::string valid;
    for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown variant '" + s + "', valid: " + valid);
}

struct ModelConfig {
    Variant variant = Variant::STWA;
    std::size_t N = 0;  // sensors; filled in from the data
    std::size_t F = 1;
    std::size_t H = 12, U = 12;
    std::size_t d = 32, k = 16, L = 3;
    std::vector<std::size_t> S = {3, 2, 2};
    std::size_t p = 1, heads = 1;
    std::size_t enc_h1 = 32, enc_h2 = 32;
    std::size_t dec_h1 = 16, dec_h2 = 32;
    std::size_t predictor_hidden = 64;
    std::size_t d_skip = 0;  // 0 -> 4*d
    double alpha = 0.1;
    double huber_delta = 1.0;
    double lr = 1e-3;
    std::size_t batch = 64, max_epochs = 50, patience = 15;
    double clip_norm = 0.0;  // 0 disables gradient clipping
    bool mean_aggregator = false;
    bool recurrent_fusion = true;
    bool generate_correlation = false;
    std::uint64_t seed = 1;

    bool uses_windows() const { return variant != Variant::SA; }
    bool uses_generator() const {
        return variant == Variant::SWA || variant == Variant::STWA || variant == Variant::STWA_DET;
    }
    bool uses_temporal() const {
        return variant == Variant::STWA || variant == Variant::STWA_DET;
    }
    bool stochastic() const { return variant == Variant::SWA || variant == Variant::STWA; }
    bool has_kl() const { return stochastic(); }
    std::size_t skip_width() const { return d_skip ? d_skip : 4 * d; }

    // token count entering each layer, plus the final output count
    std::vector<std::size_t> layer_tokens() const {
        std::vector<std::size_t> t = {H};
        if (!uses_windows()) {
            for (std::size_t l = 0; l < L; ++l) t.push_back(H);
            return t;
        }
        for (std::size_t l = 0; l < L; ++l) t.push_back(t.back() / S[l]);
        return t;
    }

    void validate() {
        if (N == 0) throw ConfigError("config: N (sensor count) must be positive");
        if (F == 0 || H == 0 || U == 0 || d == 0 || L == 0)
            throw ConfigError("config: F, H, U, d and L must be positive");
        if (heads == 0 || d % heads != 0)
            throw ConfigError("config: heads=" + std::to_string(heads) +
                              " must divide d=" + std::to_string(d));
        if (variant == Variant::WA1) {
            if (S.empty()) throw ConfigError("config: S must not be empty");
            L = 1;
            S.resize(1);
        }
        if (uses_windows()) {
            if (S.size() != L)
                throw ConfigError("config: S has " + std::to_string(S.size()) +
                                  " entries for L=" + std::to_string(L) + " layers");
            if (p == 0) throw ConfigError("config: p must be positive");
            std::size_t t = H;
            for (std::size_t l = 0; l < L; ++l) {
                if (S[l] == 0 || t % S[l] != 0)
                    throw ConfigError("config: window size S[" + std::to_string(l) + "]=" +
                                      std::to_string(S[l]) + " does not divide the " +
                                      std::to_string(t) + " tokens entering layer " +
                                      std::to_string(l + 1));
                t /= S[l];
            }
        }
        if (uses_generator() && k == 0) throw ConfigError("config: k must be positive");
        if (generate_correlation && !uses_generator())
            throw ConfigError("config: generate_correlation needs a generating variant");
        if (alpha < 0) throw ConfigError("config: alpha must be non-negative");
        if (huber_delta <= 0) throw ConfigError("config: huber_delta must be positive");
        if (lr <= 0) throw ConfigError("config: lr must be positive");
        if (batch == 0 || max_epochs == 0 || patience == 0)
            throw ConfigError("config: batch, max_epochs and patience must be positive");
        if (clip_norm < 0) throw ConfigError("config: clip_norm must be non-negative");
    }
};

struct ScoreCounts {
    std::uint64_t window_total = 0;
    std::uint64_t canonical_total = 0;
};

// ==================== model ====================

class Model {
public:
    Model(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build(rng);
    }

    struct Output {
        Tensor pred;  // N x U x F
        Tensor kl;    // scalar; detached zero for variants without a divergence term
        AttentionCost cost;
    };

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    std::size_t parameter_count() const { return store_.total_scalars(); }

    // Analytic score-entry counts for this configuration: the windowed
    // total alongside what canonical attention would cost at the same H.
    static ScoreCounts count_scores(const ModelConfig& cfg) {
        ScoreCounts sc;
        const std::uint64_t per_head = static_cast<std::uint64_t>(cfg.heads) * cfg.N;
        std::uint64_t t = cfg.H;
        for (std::size_t l = 0; l < cfg.L; ++l) {
            sc.canonical_total += per_head * cfg.H * cfg.H;
            if (!cfg.S.empty() && l < cfg.S.size() && cfg.S[l] != 0 && t % cfg.S[l] == 0) {
                sc.window_total += per_head * cfg.p * t;
                t /= cfg.S[l];
            }
        }
        return sc;
    }

    // x: N x H x F normalized input window. eps_s / eps_t: N x k noise
    // for the location / time-varying draws; null means zeros, which is
    // the evaluation mode (and the exact-mean path).
    Output forward(const Tensor& x, BoundParams& bp, const Tensor* eps_s = nullptr,
                   const Tensor* eps_t = nullptr) const {
        if (x.shape != Shape{cfg_.N, cfg_.H, cfg_.F})
            throw ValueError("forward: expected input " + shape_str({cfg_.N, cfg_.H, cfg_.F}) +
                             ", got " + shape_str(x.shape));
        Output out;

        // per-sensor embedded sequences
        std::vector<Tensor> xs(cfg_.N);
        for (std::size_t i = 0; i < cfg_.N; ++i) {
            Tensor xi = reshape(slice_axis0(x, i, 1), {cfg_.H, cfg_.F});
            xs[i] = matmul(xi, bp[i_embed_]);
        }

        // latents and divergence
        Tensor theta;
        out.kl = scalar(0.0);
        if (cfg_.uses_generator()) {
            Tensor es = eps_s ? *eps_s : zeros({cfg_.N, cfg_.k});
            Tensor z = spatial_.sample(bp, es);
            if (cfg_.uses_temporal()) {
                auto enc = encoder_.forward(bp, recent_window_matrix(x));
                Tensor zt;
                if (cfg_.stochastic()) {
                    Tensor et = eps_t ? *eps_t : zeros({cfg_.N, cfg_.k});
                    zt = sample_gaussian(enc.mu, *enc.logvar, et);
                    out.kl = kl_sum_std_normal(bp[spatial_.i_mu], bp[spatial_.i_logvar], enc.mu,
                                               *enc.logvar);
                } else {
                    zt = enc.mu;
                }
                theta = add(z, zt);
            } else {
                theta = z;
                if (cfg_.has_kl())
                    out.kl = kl_std_normal(bp[spatial_.i_mu], bp[spatial_.i_logvar]);
            }
        }

        // attention stack with skip accumulation
        Tensor skip_acc;
        if (cfg_.uses_windows())
            forward_windows(bp, xs, theta, skip_acc, out.cost);
        else
            forward_canonical(bp, xs, skip_acc, out.cost);

        Tensor hidden = relu(matmul(skip_acc, bp[i_W3_]));
        Tensor pred = matmul(hidden, bp[i_W4_]);
        out.pred = reshape(pred, {cfg_.N, cfg_.U, cfg_.F});
        return out;
    }

private:
    struct Layer {
        std::size_t tokens_in = 0, windows = 0;
        std::size_t i_proxies = 0;          // window variants
        std::size_t i_Q = 0, i_K = 0, i_V = 0;  // static projections
        ParamDecoder decoder;               // generating variants
        WeightingNetwork weighting;         // window variants
        FusionNetwork fusion;               // window variants with recurrence
        std::size_t i_T1 = 0, i_T2 = 0;     // shared correlation transforms
        std::size_t i_skip = 0;
    };

    void build(Rng& rng) {
        const std::size_t d = cfg_.d;
        i_embed_ = store_.add("embed.W", init_weight({cfg_.F, d}, cfg_.F, rng));
        if (cfg_.uses_generator()) {
            spatial_ = SpatialLatent(store_, "spatial", cfg_.N, cfg_.k, cfg_.stochastic(), rng);
            if (cfg_.uses_temporal())
                encoder_ = TemporalEncoder(store_, "encoder", cfg_.H * cfg_.F, cfg_.k, cfg_.enc_h1,
                                           cfg_.enc_h2, cfg_.stochastic(), rng);
        }
        const auto tokens = cfg_.layer_tokens();
        for (std::size_t l = 0; l < cfg_.L; ++l) {
            Layer layer;
            layer.tokens_in = tokens[l];
            const std::string pre = "layer" + std::to_string(l);
            if (cfg_.uses_windows()) {
                layer.windows = tokens[l + 1];
                layer.i_proxies = store_.add(
                    pre + ".proxies",
                    init_weight({layer.windows * cfg_.N * cfg_.p, d}, d, rng));
                if (cfg_.uses_generator()) {
                    layer.decoder = ParamDecoder(store_, pre + ".dec", cfg_.k, d, cfg_.dec_h1,
                                                 cfg_.dec_h2, cfg_.generate_correlation, rng);
                } else {
                    layer.i_K = store_.add(pre + ".K", init_weight({d, d}, d, rng));
                    layer.i_V = store_.add(pre + ".V", init_weight({d, d}, d, rng));
                }
                layer.weighting = WeightingNetwork(store_, pre + ".wnet", cfg_.p, d, rng);
                if (cfg_.recurrent_fusion) layer.fusion = FusionNetwork(store_, pre + ".fuse", d, rng);
            } else {
                layer.windows = 1;  // pooled representation feeds the skip path
                layer.i_Q = store_.add(pre + ".Q", init_weight({d, d}, d, rng));
                layer.i_K = store_.add(pre + ".K", init_weight({d, d}, d, rng));
                layer.i_V = store_.add(pre + ".V", init_weight({d, d}, d, rng));
            }
            if (!cfg_.generate_correlation) {
                layer.i_T1 = store_.add(pre + ".corr.T1", init_weight({d, d}, d, rng));
                layer.i_T2 = store_.add(pre + ".corr.T2", init_weight({d, d}, d, rng));
            }
            layer.i_skip = store_.add(
                pre + ".skip.W",
                init_weight({layer.windows * d, cfg_.skip_width()}, layer.windows * d, rng));
            layers_.push_back(std::move(layer));
        }
        i_W3_ = store_.add("pred.W3",
                           init_weight({cfg_.skip_width(), cfg_.predictor_hidden},
                                       cfg_.skip_width(), rng));
        i_W4_ = store_.add("pred.W4", init_weight({cfg_.predictor_hidden, cfg_.U * cfg_.F},
                                                  cfg_.predictor_hidden, rng));
    }

    // flattened raw windows, one row per sensor (stays off the tape:
    // the input is data, not a parameter)
    Tensor recent_window_matrix(const Tensor& x) const {
        std::vector<Tensor> rows;
        rows.reserve(cfg_.N);
        for (std::size_t i = 0; i < cfg_.N; ++i)
            rows.push_back(reshape(slice_axis0(x, i, 1), {1, cfg_.H * cfg_.F}));
        return concat_rows(rows);
    }

    void forward_windows(BoundParams& bp, std::vector<Tensor>& xs, const Tensor& theta,
                         Tensor& skip_acc, AttentionCost& cost) const {
        const std::size_t N = cfg_.N, d = cfg_.d, p = cfg_.p;
        for (std::size_t l = 0; l < cfg_.L; ++l) {
            const Layer& layer = layers_[l];
            GeneratedParams gp;
            if (cfg_.uses_generator()) gp = layer.decoder.decode(bp, theta);
            std::vector<Tensor> xK(N), xV(N);
            for (std::size_t i = 0; i < N; ++i) {
                const Tensor& K = cfg_.uses_generator() ? gp.K[i] : bp[layer.i_K];
                const Tensor& V = cfg_.uses_generator() ? gp.V[i] : bp[layer.i_V];
                xK[i] = matmul(xs[i], K);
                xV[i] = matmul(xs[i], V);
            }
            const std::size_t W = layer.windows, S = cfg_.S[l];
            std::vector<Tensor> h_prev(N, zeros({1, d}));
            std::vector<Tensor> mixed_windows;
            mixed_windows.reserve(W);
            for (std::size_t w = 0; w < W; ++w) {
                std::vector<Tensor> agg_rows;
                agg_rows.reserve(N);
                for (std::size_t i = 0; i < N; ++i) {
                    Tensor P = slice_rows(bp[layer.i_proxies], (w * N + i) * p, p);
                    if (cfg_.recurrent_fusion) P = layer.fusion.forward(bp, h_prev[i], P);
                    Tensor h = proxy_attention(P, slice_rows(xK[i], w * S, S),
                                               slice_rows(xV[i], w * S, S), cfg_.heads, &cost);
                    Tensor agg = cfg_.mean_aggregator
                                     ? aggregate_mean(h)
                                     : aggregate_weighted(layer.weighting.forward(bp, h), h);
                    h_prev[i] = agg;
                    agg_rows.push_back(agg);
                }
                Tensor Hw = concat_rows(agg_rows);
                Tensor Hbar = cfg_.generate_correlation
                                  ? sensor_correlation(Hw, gp.T1, gp.T2, &cost)
                                  : sensor_correlation(Hw, bp[layer.i_T1], bp[layer.i_T2], &cost);
                mixed_windows.push_back(Hbar);
            }
            Tensor flat = W == 1 ? mixed_windows[0] : concat_cols(mixed_windows);  // N x (W*d)
            Tensor proj = matmul(flat, bp[layer.i_skip]);
            skip_acc = l == 0 ? proj : add(skip_acc, proj);
            for (std::size_t i = 0; i < N; ++i)
                xs[i] = reshape(slice_rows(flat, i, 1), {W, d});
        }
    }

    void forward_canonical(BoundParams& bp, std::vector<Tensor>& xs, Tensor& skip_acc,
                           AttentionCost& cost) const {
        const std::size_t N = cfg_.N;
        for (std::size_t l = 0; l < cfg_.L; ++l) {
            const Layer& layer = layers_[l];
            std::vector<Tensor> att(N);
            std::vector<Tensor> pooled_rows;
            pooled_rows.reserve(N);
            for (std::size_t i = 0; i < N; ++i) {
                Tensor xQ = matmul(xs[i], bp[layer.i_Q]);
                Tensor xK = matmul(xs[i], bp[layer.i_K]);
                Tensor xV = matmul(xs[i], bp[layer.i_V]);
                att[i] = canonical_attention(xQ, xK, xV, cfg_.heads, &cost);
                pooled_rows.push_back(mean_rows(att[i]));
            }
            Tensor pooled = concat_rows(pooled_rows);  // N x d
            Tensor mixed = sensor_correlation(pooled, bp[layer.i_T1], bp[layer.i_T2], &cost);
            Tensor proj = matmul(mixed, bp[layer.i_skip]);
            skip_acc = l == 0 ? proj : add(skip_acc, proj);
            xs = att;
        }
    }

    ModelConfig cfg_;
    ParamStore store_;
    std::size_t i_embed_ = 0;
    SpatialLatent spatial_;
    TemporalEncoder encoder_;
    std::vector<Layer> layers_;
    std::size_t i_W3_ = 0, i_W4_ = 0;
};

}  // namespace stwa
