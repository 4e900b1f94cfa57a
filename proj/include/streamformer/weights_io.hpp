#pragma once

// Flat binary weight container.
//
//   "SFW1"                      4 bytes magic
//   digest                      u64 little-endian (config digest)
//   repeated until end of file:
//     name_len                  u32
//     name                      name_len bytes
//     rank                      u32
//     dims                      rank x u64
//     data                      prod(dims) x f32 little-endian
//
// Encoder tensors live under "encoder.", second-pass tensors under "cascade.".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamformer/cascade.hpp"
#include "streamformer/conformer.hpp"

namespace streamformer {

inline constexpr char kWeightMagic[4] = {'S', 'F', 'W', '1'};

struct TensorRecord {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;
};

struct WeightContainer {
    std::uint64_t digest = 0;
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

class WeightFormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_bytes(std::istream& in, void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), std::streamsize(n));
    return std::size_t(in.gcount()) == n;
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!get_bytes(in, b, 4)) throw WeightFormatError(std::string("truncated container reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!get_bytes(in, b, 8)) throw WeightFormatError(std::string("truncated container reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

} // namespace detail

inline void write_container(std::ostream& out, const WeightContainer& c) {
    out.write(kWeightMagic, 4);
    detail::put_u64(out, c.digest);
    for (const auto& t : c.tensors) {
        detail::put_u32(out, std::uint32_t(t.name.size()));
        out.write(t.name.data(), std::streamsize(t.name.size()));
        detail::put_u32(out, std::uint32_t(t.dims.size()));
        for (auto d : t.dims) detail::put_u64(out, d);
        for (float v : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw WeightFormatError("write failed");
}

inline WeightContainer read_container(std::istream& in) {
    char magic[4];
    if (!detail::get_bytes(in, magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0) {
        throw WeightFormatError("bad magic: not an SFW1 weight container");
    }
    WeightContainer c;
    c.digest = detail::get_u64(in, "digest");
    while (in.peek() != std::char_traits<char>::eof()) {
        TensorRecord t;
        const std::uint32_t name_len = detail::get_u32(in, "name length");
        t.name.resize(name_len);
        if (!detail::get_bytes(in, t.name.data(), name_len)) throw WeightFormatError("truncated tensor name");
        const std::uint32_t rank = detail::get_u32(in, "rank");
        std::uint64_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.dims.push_back(detail::get_u64(in, "dims"));
            count *= t.dims.back();
        }
        t.data.resize(count);
        for (auto& v : t.data) v = std::bit_cast<float>(detail::get_u32(in, "tensor data"));
        c.tensors.push_back(std::move(t));
    }
    return c;
}

inline std::uint64_t container_digest(const EncoderConfig& enc, const std::optional<CascadeConfig>& cas = std::nullopt) {
    std::string s = canonical_string(enc);
    if (cas) s += "|cascade:" + canonical_string(*cas);
    return fnv1a64(s);
}

namespace detail {

template <typename W, typename Visit>
void pack_tensors(W& weights, Visit&& visit, WeightContainer& c) {
    visit(weights, [&](const TensorInfo& info, auto values) {
        TensorRecord t;
        t.name = info.name;
        t.dims.assign(info.dims.begin(), info.dims.end());
        t.data.reserve(values.size());
        for (auto v : values) t.data.push_back(float(v));
        c.tensors.push_back(std::move(t));
    });
}

template <typename W, typename Visit>
void unpack_tensors(W& weights, Visit&& visit, const WeightContainer& c) {
    visit(weights, [&](const TensorInfo& info, auto values) {
        const TensorRecord* t = c.find(info.name);
        if (!t) throw WeightFormatError("missing tensor '" + info.name + "'");
        if (t->dims.size() != info.dims.size() ||
            !std::equal(t->dims.begin(), t->dims.end(), info.dims.begin(),
                        [](std::uint64_t a, std::size_t b) { return a == b; })) {
            throw WeightFormatError("tensor '" + info.name + "' has unexpected shape");
        }
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = t->data[i];
    });
}

inline const auto encoder_visit = [](auto& w, auto&& fn) { for_each_tensor(w, fn); };
inline const auto cascade_visit = [](auto& w, auto&& fn) { for_each_cascade_tensor(w, fn); };

} // namespace detail

template <typename T>
WeightContainer pack_weights(const EncoderConfig& cfg, const EncoderWeights<T>& enc,
                             const CascadeWeights<T>* cas = nullptr, const CascadeConfig* cas_cfg = nullptr) {
    check_weights(cfg, enc);
    WeightContainer c;
    c.digest = container_digest(cfg, cas_cfg ? std::optional<CascadeConfig>(*cas_cfg) : std::nullopt);
    detail::pack_tensors(enc, detail::encoder_visit, c);
    if (cas) detail::pack_tensors(*cas, detail::cascade_visit, c);
    return c;
}

template <typename T>
EncoderWeights<T> unpack_encoder(const WeightContainer& c, const EncoderConfig& cfg,
                                 const std::optional<CascadeConfig>& cas_cfg = std::nullopt) {
    if (c.digest != container_digest(cfg, cas_cfg)) {
        throw WeightFormatError("config digest mismatch: container was written for a different architecture");
    }
    EncoderWeights<T> w = allocate_weights<T>(cfg);
    detail::unpack_tensors(w, detail::encoder_visit, c);
    return w;
}

template <typename T>
CascadeWeights<T> unpack_cascade(const WeightContainer& c, const EncoderConfig& cfg, const CascadeConfig& cas_cfg) {
    if (c.digest != container_digest(cfg, cas_cfg)) {
        throw WeightFormatError("config digest mismatch: container was written for a different architecture");
    }
    CascadeWeights<T> w = allocate_cascade_weights<T>(cas_cfg, cfg.model_dim);
    detail::unpack_tensors(w, detail::cascade_visit, c);
    return w;
}

template <typename T>
void save_weights(const std::string& path, const EncoderConfig& cfg, const EncoderWeights<T>& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WeightFormatError("cannot open '" + path + "' for writing");
    write_container(out, pack_weights(cfg, w));
}

template <typename T>
EncoderWeights<T> load_weights(const std::string& path, const EncoderConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WeightFormatError("cannot open '" + path + "'");
    return unpack_encoder<T>(read_container(in), cfg);
}

} // namespace streamformer
