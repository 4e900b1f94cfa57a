#pragma once

// Strict JSON configuration files. Unknown keys are errors so a typo in an
// ablation grid cannot silently fall back to a default.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "streamformer/bench.hpp"
#include "streamformer/cascade.hpp"
#include "streamformer/conformer.hpp"
#include "streamformer/costmodel.hpp"

namespace streamformer {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct BenchSettings {
    std::size_t frames = 256;
    std::size_t chunk_size = 1;
    std::size_t warmup = 32;
    std::size_t steps = 128;
    Precision precision = Precision::f32;
    std::uint64_t seed = 0;
};

struct ConfigFile {
    std::string name = "config";
    EncoderConfig encoder;
    std::optional<CascadeConfig> cascade; // present iff cascade.enabled
    BenchSettings bench;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items()) {
        if (!keys.count(key)) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
}

inline std::size_t read_count(const json& obj, const std::string& where, const char* key, std::size_t fallback,
                              bool positive) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(where + "." + key + ": expected a non-negative integer");
    }
    const auto n = v.get<std::size_t>();
    if (positive && n == 0) throw ConfigError(where + "." + key + ": must be positive");
    return n;
}

inline double read_real(const json& obj, const std::string& where, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return obj.at(key).get<double>();
}

inline bool read_bool(const json& obj, const std::string& where, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected true/false");
    return obj.at(key).get<bool>();
}

inline std::string read_string(const json& obj, const std::string& where, const char* key, const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
    return obj.at(key).get<std::string>();
}

template <typename Fn>
auto wrap_value_error(const std::string& where, Fn&& fn) {
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

inline KernelConfig read_kernel(const json& obj, const std::string& where, KernelConfig k) {
    reject_unknown(obj, where, {"kind", "use_affine", "feature_dim"});
    if (obj.contains("kind")) {
        const std::string kind = read_string(obj, where, "kind", "");
        k.kind = wrap_value_error(where + ".kind", [&] { return parse_kernel_kind(kind); });
    }
    k.use_affine = read_bool(obj, where, "use_affine", k.use_affine);
    k.feature_dim = read_count(obj, where, "feature_dim", k.feature_dim, false);
    return k;
}

// Applies the keys present in `obj` on top of `c`.
inline EncoderConfig read_encoder(const json& obj, EncoderConfig c, const std::string& where = "encoder") {
    reject_unknown(obj, where,
                   {"input_dim", "model_dim", "total_blocks", "conv_only_blocks", "ff_expansion", "heads",
                    "conv_kernel", "attn_left_context", "attention_kind", "kernel", "layernorm_eps",
                    "normalizer_eps"});
    c.input_dim = read_count(obj, where, "input_dim", c.input_dim, true);
    c.model_dim = read_count(obj, where, "model_dim", c.model_dim, true);
    c.total_blocks = read_count(obj, where, "total_blocks", c.total_blocks, true);
    c.conv_only_blocks = read_count(obj, where, "conv_only_blocks", c.conv_only_blocks, false);
    c.ff_expansion = read_count(obj, where, "ff_expansion", c.ff_expansion, true);
    c.heads = read_count(obj, where, "heads", c.heads, true);
    c.conv_kernel = read_count(obj, where, "conv_kernel", c.conv_kernel, true);
    c.attn_left_context = read_count(obj, where, "attn_left_context", c.attn_left_context, false);
    if (obj.contains("attention_kind")) {
        const std::string kind = read_string(obj, where, "attention_kind", "");
        c.attention_kind = wrap_value_error(where + ".attention_kind", [&] { return parse_attention_kind(kind); });
    }
    if (obj.contains("kernel")) c.kernel = read_kernel(obj.at("kernel"), where + ".kernel", c.kernel);
    c.layernorm_eps = read_real(obj, where, "layernorm_eps", c.layernorm_eps);
    c.normalizer_eps = read_real(obj, where, "normalizer_eps", c.normalizer_eps);
    return c;
}

inline std::optional<CascadeConfig> read_cascade(const json& obj, std::size_t first_pass_dim) {
    const std::string where = "cascade";
    reject_unknown(obj, where,
                   {"enabled", "blocks", "right_context", "model_dim", "ff_expansion", "heads", "conv_kernel",
                    "left_context", "centered_conv", "attention_kind", "kernel"});
    if (!read_bool(obj, where, "enabled", true)) return std::nullopt;
    CascadeConfig c;
    c.model_dim = first_pass_dim;
    c.blocks = read_count(obj, where, "blocks", c.blocks, true);
    c.right_context = read_count(obj, where, "right_context", c.right_context, false);
    c.model_dim = read_count(obj, where, "model_dim", c.model_dim, true);
    c.ff_expansion = read_count(obj, where, "ff_expansion", c.ff_expansion, true);
    c.heads = read_count(obj, where, "heads", c.heads, true);
    c.conv_kernel = read_count(obj, where, "conv_kernel", c.conv_kernel, true);
    c.left_context = read_count(obj, where, "left_context", c.left_context, false);
    c.centered_conv = read_bool(obj, where, "centered_conv", c.centered_conv);
    if (obj.contains("attention_kind")) {
        const std::string kind = read_string(obj, where, "attention_kind", "");
        c.attention_kind = wrap_value_error(where + ".attention_kind", [&] { return parse_attention_kind(kind); });
    }
    if (obj.contains("kernel")) c.kernel = read_kernel(obj.at("kernel"), where + ".kernel", c.kernel);
    return c;
}

inline BenchSettings read_bench(const json& obj) {
    const std::string where = "bench";
    reject_unknown(obj, where, {"frames", "chunk_size", "warmup", "steps", "precision", "seed"});
    BenchSettings b;
    b.frames = read_count(obj, where, "frames", b.frames, true);
    b.chunk_size = read_count(obj, where, "chunk_size", b.chunk_size, true);
    b.warmup = read_count(obj, where, "warmup", b.warmup, false);
    b.steps = read_count(obj, where, "steps", b.steps, true);
    if (obj.contains("precision")) {
        const json& p = obj.at("precision");
        const std::string s = p.is_number_integer() ? std::to_string(p.get<int>()) : read_string(obj, where, "precision", "");
        b.precision = wrap_value_error(where + ".precision", [&] { return parse_precision(s); });
    }
    b.seed = read_count(obj, where, "seed", b.seed, false);
    return b;
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // nlohmann reports "parse error at line L, column C: ..."
        std::string msg = e.what();
        const auto pos = msg.find("parse error");
        throw ConfigError(origin + ": " + (pos == std::string::npos ? msg : msg.substr(pos)));
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

// STREAMFORMER_SEED, when set, overrides any configured seed.
inline std::optional<std::uint64_t> seed_override_from_env() {
    const char* v = std::getenv("STREAMFORMER_SEED");
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(v, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("STREAMFORMER_SEED: not an integer: '") + v + "'");
    return seed;
}

inline ConfigFile parse_config(const nlohmann::json& doc) {
    detail::reject_unknown(doc, "", {"name", "encoder", "cascade", "bench"});
    ConfigFile cfg;
    cfg.name = detail::read_string(doc, "config", "name", cfg.name);
    if (doc.contains("encoder")) cfg.encoder = detail::read_encoder(doc.at("encoder"), cfg.encoder);
    if (doc.contains("bench")) cfg.bench = detail::read_bench(doc.at("bench"));
    if (doc.contains("cascade")) cfg.cascade = detail::read_cascade(doc.at("cascade"), cfg.encoder.model_dim);
    if (auto seed = seed_override_from_env()) cfg.bench.seed = *seed;
    cfg.encoder.seed = cfg.bench.seed;
    detail::wrap_value_error("encoder", [&] {
        cfg.encoder.validate();
        return 0;
    });
    if (cfg.cascade) {
        detail::wrap_value_error("cascade", [&] {
            cfg.cascade->validate();
            return 0;
        });
    }
    return cfg;
}

inline ConfigFile parse_config_text(const std::string& text, const std::string& origin = "<config>") {
    return parse_config(detail::parse_json_text(text, origin));
}

inline ConfigFile load_config(const std::string& path) { return parse_config_text(detail::read_file(path), path); }

// Grid file: {"base": {<config document>}, "variants": [{"id": ..., "encoder": {...overrides}}]}.
// A variant that fails to parse or validate becomes an entry with `error` set.
inline std::vector<GridEntry> parse_grid_text(const std::string& text, const std::string& origin = "<grid>") {
    const nlohmann::json doc = detail::parse_json_text(text, origin);
    detail::reject_unknown(doc, "", {"base", "variants"});
    EncoderConfig base;
    if (doc.contains("base")) base = parse_config(doc.at("base")).encoder;
    std::vector<GridEntry> entries;
    if (!doc.contains("variants")) return entries;
    if (!doc.at("variants").is_array()) throw ConfigError("variants: expected an array");
    std::size_t index = 0;
    for (const auto& v : doc.at("variants")) {
        GridEntry e;
        e.id = "row" + std::to_string(index++);
        e.config = base;
        try {
            detail::reject_unknown(v, "variant", {"id", "encoder"});
            e.id = detail::read_string(v, "variant", "id", e.id);
            if (v.contains("encoder")) e.config = detail::read_encoder(v.at("encoder"), base, e.id + ".encoder");
            e.config.validate();
        } catch (const std::exception& ex) {
            e.error = ex.what();
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

inline std::vector<GridEntry> load_grid(const std::string& path) {
    return parse_grid_text(detail::read_file(path), path);
}

inline BenchSpec bench_spec_from(const ConfigFile& cfg) {
    BenchSpec s;
    s.config = cfg.encoder;
    s.label = cfg.name;
    s.total_frames = cfg.bench.frames;
    s.chunk_size = cfg.bench.chunk_size;
    s.warmup_steps = cfg.bench.warmup;
    s.measured_steps = cfg.bench.steps;
    s.seed = cfg.bench.seed;
    s.precision = cfg.bench.precision;
    return s;
}

} // namespace streamformer
