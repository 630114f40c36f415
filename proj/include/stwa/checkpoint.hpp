#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "stwa/data.hpp"
#include "stwa/model.hpp"

namespace stwa {

// ==================== config <-> json ====================

inline nlohmann::json config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["variant"] = variant_name(c.variant);
    j["N"] = c.N;
    j["F"] = c.F;
    j["H"] = c.H;
    j["U"] = c.U;
    j["d"] = c.d;
    j["k"] = c.k;
    j["L"] = c.L;
    j["S"] = c.S;
    j["p"] = c.p;
    j["heads"] = c.heads;
    j["enc_h1"] = c.enc_h1;
    j["enc_h2"] = c.enc_h2;
    j["dec_h1"] = c.dec_h1;
    j["dec_h2"] = c.dec_h2;
    j["predictor_hidden"] = c.predictor_hidden;
    j["d_skip"] = c.d_skip;
    j["alpha"] = c.alpha;
    j["huber_delta"] = c.huber_delta;
    j["lr"] = c.lr;
    j["batch"] = c.batch;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["clip_norm"] = c.clip_norm;
    j["mean_aggregator"] = c.mean_aggregator;
    j["recurrent_fusion"] = c.recurrent_fusion;
    j["generate_correlation"] = c.generate_correlation;
    j["seed"] = c.seed;
    return j;
}

namespace detail {

inline std::size_t json_size(const nlohmann::json& j, const std::string& key) {
    if (!j.is_number_integer() && !j.is_number_unsigned())
        throw ConfigError("config: key '" + key + "' must be a non-negative integer");
    if (j.is_number_integer() && j.get<std::int64_t>() < 0)
        throw ConfigError("config: key '" + key + "' must be a non-negative integer");
    return j.get<std::size_t>();
}

inline double json_num(const nlohmann::json& j, const std::string& key) {
    if (!j.is_number()) throw ConfigError("config: key '" + key + "' must be a number");
    return j.get<double>();
}

inline bool json_bool(const nlohmann::json& j, const std::string& key) {
    if (!j.is_boolean()) throw ConfigError("config: key '" + key + "' must be true or false");
    return j.get<bool>();
}

}  // namespace detail

// Flat key set, every key optional, defaults from ModelConfig. An
// unrecognized key is an error rather than a silent ignore: a typo in
// a config file should never produce a quietly different model.
inline ModelConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    ModelConfig c;
    for (const auto& [key, val] : j.items()) {
        if (key == "variant") {
            if (!val.is_string()) throw ConfigError("config: key 'variant' must be a string");
            c.variant = parse_variant(val.get<std::string>());
        } else if (key == "N") {
            c.N = detail::json_size(val, key);
        } else if (key == "F") {
            c.F = detail::json_size(val, key);
        } else if (key == "H") {
            c.H = detail::json_size(val, key);
        } else if (key == "U") {
            c.U = detail::json_size(val, key);
        } else if (key == "d") {
            c.d = detail::json_size(val, key);
        } else if (key == "k") {
            c.k = detail::json_size(val, key);
        } else if (key == "L") {
            c.L = detail::json_size(val, key);
        } else if (key == "S") {
            if (!val.is_array()) throw ConfigError("config: key 'S' must be an array");
            c.S.clear();
            for (const auto& e : val) c.S.push_back(detail::json_size(e, "S"));
        } else if (key == "p") {
            c.p = detail::json_size(val, key);
        } else if (key == "heads") {
            c.heads = detail::json_size(val, key);
        } else if (key == "enc_h1") {
            c.enc_h1 = detail::json_size(val, key);
        } else if (key == "enc_h2") {
            c.enc_h2 = detail::json_size(val, key);
        } else if (key == "dec_h1") {
            c.dec_h1 = detail::json_size(val, key);
        } else if (key == "dec_h2") {
            c.dec_h2 = detail::json_size(val, key);
        } else if (key == "predictor_hidden") {
            c.predictor_hidden = detail::json_size(val, key);
        } else if (key == "d_skip") {
            c.d_skip = detail::json_size(val, key);
        } else if (key == "alpha") {
            c.alpha = detail::json_num(val, key);
        } else if (key == "huber_delta") {
            c.huber_delta = detail::json_num(val, key);
        } else if (key == "lr") {
            c.lr = detail::json_num(val, key);
        } else if (key == "batch") {
            c.batch = detail::json_size(val, key);
        } else if (key == "max_epochs") {
            c.max_epochs = detail::json_size(val, key);
        } else if (key == "patience") {
            c.patience = detail::json_size(val, key);
        } else if (key == "clip_norm") {
            c.clip_norm = detail::json_num(val, key);
        } else if (key == "mean_aggregator") {
            c.mean_aggregator = detail::json_bool(val, key);
        } else if (key == "recurrent_fusion") {
            c.recurrent_fusion = detail::json_bool(val, key);
        } else if (key == "generate_correlation") {
            c.generate_correlation = detail::json_bool(val, key);
        } else if (key == "seed") {
            if (!val.is_number_integer() && !val.is_number_unsigned())
                throw ConfigError("config: key 'seed' must be a non-negative integer");
            c.seed = val.get<std::uint64_t>();
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    return c;
}

// ==================== checkpoint files ====================
//
// Layout: 8-byte magic, u64 little-endian header length, JSON header,
// then every named array as raw f64 little-endian in header order.
// The header records shapes and an FNV-1a checksum of the payload so a
// truncated or edited file fails loudly instead of loading garbage.

namespace detail {

inline constexpr char kCkptMagic[8] = {'S', 'T', 'W', 'A', 'C', 'K', 'P', 'T'};
inline constexpr int kCkptFormat = 1;

inline std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline void append_f64_le(std::vector<unsigned char>& out, const double* vals, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(vals[i]);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
}

inline double read_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return std::bit_cast<double>(bits);
}

inline std::string hex_u64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& model, const Normalizer& norm) {
    if (!norm.fitted()) throw ValueError("save_checkpoint: normalizer has not been fitted");

    nlohmann::json arrays = nlohmann::json::array();
    std::vector<unsigned char> payload;
    auto put = [&](const std::string& name, const Shape& shape, const double* vals,
                   std::size_t n) {
        arrays.push_back({{"name", name}, {"shape", shape}});
        detail::append_f64_le(payload, vals, n);
    };
    for (const auto& prm : model.params().all())
        put(prm.name, prm.value.shape, prm.value.data->data(), prm.value.numel());
    put("normalizer.mean", {norm.means().size()}, norm.means().data(), norm.means().size());
    put("normalizer.std", {norm.stds().size()}, norm.stds().data(), norm.stds().size());

    nlohmann::json header;
    header["format"] = detail::kCkptFormat;
    header["kind"] = "stwa-checkpoint";
    header["config"] = config_to_json(model.config());
    header["arrays"] = arrays;
    header["payload_checksum"] = detail::hex_u64(detail::fnv1a(payload.data(), payload.size()));
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(detail::kCkptMagic, 8);
    std::uint64_t hlen = htext.size();
    unsigned char lenb[8];
    for (int b = 0; b < 8; ++b) lenb[b] = static_cast<unsigned char>(hlen >> (8 * b));
    f.write(reinterpret_cast<const char*>(lenb), 8);
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

struct LoadedCheckpoint {
    ModelConfig cfg;
    std::shared_ptr<Model> model;
    Normalizer norm;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");

    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw ConfigError("checkpoint '" + path + "': bad magic, not a checkpoint file");
    unsigned char lenb[8];
    f.read(reinterpret_cast<char*>(lenb), 8);
    if (!f) throw ConfigError("checkpoint '" + path + "': truncated header length");
    std::uint64_t hlen = 0;
    for (int b = 0; b < 8; ++b) hlen |= static_cast<std::uint64_t>(lenb[b]) << (8 * b);
    if (hlen == 0 || hlen > (1ull << 26))
        throw ConfigError("checkpoint '" + path + "': implausible header length");
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw ConfigError("checkpoint '" + path + "': truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint '" + path + "': header is not valid JSON: " + e.what());
    }
    if (!header.is_object() || header.value("kind", "") != "stwa-checkpoint")
        throw ConfigError("checkpoint '" + path + "': missing kind marker");
    if (header.value("format", -1) != detail::kCkptFormat)
        throw ConfigError("checkpoint '" + path + "': unsupported format version");

    LoadedCheckpoint out;
    out.cfg = config_from_json(header.at("config"));
    Rng rng(out.cfg.seed);
    out.model = std::make_shared<Model>(out.cfg, rng);

    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(f)),
                                       std::istreambuf_iterator<char>());
    const std::string want = header.value("payload_checksum", "");
    const std::string got = detail::hex_u64(detail::fnv1a(payload.data(), payload.size()));
    if (want != got)
        throw ConfigError("checkpoint '" + path + "': checksum/shape mismatch (payload checksum " +
                          got + " does not match header " + want + ")");

    // walk the header arrays against the freshly built parameter store
    const auto& arrays = header.at("arrays");
    auto& store = out.model->params();
    const std::size_t n_params = store.all().size();
    if (!arrays.is_array() || arrays.size() != n_params + 2)
        throw ConfigError("checkpoint '" + path + "': checksum/shape mismatch (expected " +
                          std::to_string(n_params + 2) + " arrays, header lists " +
                          std::to_string(arrays.size()) + ")");
    std::size_t off = 0;
    auto take = [&](const std::string& name, const Shape& shape, double* dst, std::size_t n,
                    const nlohmann::json& entry) {
        if (entry.value("name", "") != name ||
            entry.value("shape", std::vector<std::size_t>{}) != shape)
            throw ConfigError("checkpoint '" + path + "': checksum/shape mismatch (array '" +
                              name + "' " + shape_str(shape) + " vs header '" +
                              entry.value("name", "?") + "')");
        if (off + 8 * n > payload.size())
            throw ConfigError("checkpoint '" + path + "': checksum/shape mismatch (payload too short)");
        for (std::size_t i = 0; i < n; ++i) dst[i] = detail::read_f64_le(&payload[off + 8 * i]);
        off += 8 * n;
    };
    for (std::size_t pi = 0; pi < n_params; ++pi) {
        auto& prm = store.all()[pi];
        take(prm.name, prm.value.shape, prm.value.data->data(), prm.value.numel(), arrays[pi]);
    }
    const std::size_t N = out.cfg.N;
    std::vector<double> means(N), stds(N);
    take("normalizer.mean", {N}, means.data(), N, arrays[n_params]);
    take("normalizer.std", {N}, stds.data(), N, arrays[n_params + 1]);
    if (off != payload.size())
        throw ConfigError("checkpoint '" + path + "': checksum/shape mismatch (trailing bytes)");
    out.norm.restore(std::move(means), std::move(stds));
    return out;
}

}  // namespace stwa
