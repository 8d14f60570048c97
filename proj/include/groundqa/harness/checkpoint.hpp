#pragma once

// Versioned checkpoint container: named float64 parameter arrays plus the
// JSON configuration echo of the run that produced them.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace ckpt_detail {

constexpr char kMagic[4] = {'G', 'Q', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_u64(std::string& out, std::uint64_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t take_u32(const std::string& buf, std::size_t& at) {
    if (at + sizeof(std::uint32_t) > buf.size()) throw StateError("checkpoint: truncated file");
    std::uint32_t v;
    std::memcpy(&v, buf.data() + at, sizeof v);
    at += sizeof v;
    return v;
}

inline std::uint64_t take_u64(const std::string& buf, std::size_t& at) {
    if (at + sizeof(std::uint64_t) > buf.size()) throw StateError("checkpoint: truncated file");
    std::uint64_t v;
    std::memcpy(&v, buf.data() + at, sizeof v);
    at += sizeof v;
    return v;
}

inline std::string take_bytes(const std::string& buf, std::size_t& at, std::uint64_t n) {
    if (at + n > buf.size()) throw StateError("checkpoint: truncated file");
    std::string out = buf.substr(at, n);
    at += n;
    return out;
}

} // namespace ckpt_detail

struct Checkpoint {
    nlohmann::json config;
    std::vector<std::pair<std::string, Mat>> entries;
};

inline void save_checkpoint(const std::string& path, const nlohmann::json& config,
                            const std::vector<Param*>& params) {
    std::string buf;
    buf.append(ckpt_detail::kMagic, 4);
    ckpt_detail::put_u32(buf, ckpt_detail::kVersion);
    std::string cfg = config.dump();
    ckpt_detail::put_u64(buf, cfg.size());
    buf += cfg;
    ckpt_detail::put_u32(buf, std::uint32_t(params.size()));
    for (const Param* p : params) {
        ckpt_detail::put_u32(buf, std::uint32_t(p->name.size()));
        buf += p->name;
        ckpt_detail::put_u64(buf, std::uint64_t(p->value.rows()));
        ckpt_detail::put_u64(buf, std::uint64_t(p->value.cols()));
        for (Eigen::Index r = 0; r < p->value.rows(); ++r)
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                double v = p->value(r, c);
                buf.append(reinterpret_cast<const char*>(&v), sizeof v);
            }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("checkpoint: cannot open for writing: " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw StateError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StateError("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t at = 0;
    if (ckpt_detail::take_bytes(buf, at, 4) != std::string(ckpt_detail::kMagic, 4))
        throw StateError("checkpoint: bad magic in " + path);
    std::uint32_t version = ckpt_detail::take_u32(buf, at);
    if (version != ckpt_detail::kVersion)
        throw StateError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    std::uint64_t cfg_len = ckpt_detail::take_u64(buf, at);
    ck.config = nlohmann::json::parse(ckpt_detail::take_bytes(buf, at, cfg_len));
    std::uint32_t count = ckpt_detail::take_u32(buf, at);
    ck.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = ckpt_detail::take_u32(buf, at);
        std::string name = ckpt_detail::take_bytes(buf, at, name_len);
        std::uint64_t rows = ckpt_detail::take_u64(buf, at);
        std::uint64_t cols = ckpt_detail::take_u64(buf, at);
        std::string bytes = ckpt_detail::take_bytes(buf, at, rows * cols * sizeof(double));
        Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        std::size_t off = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                std::memcpy(&m(r, c), bytes.data() + off, sizeof(double));
                off += sizeof(double);
            }
        ck.entries.emplace_back(std::move(name), std::move(m));
    }
    return ck;
}

// Copies stored arrays into the given parameters, matched by name. Every
// parameter must be found with its exact shape, and every stored entry must
// be consumed, so architecture drift is caught instead of partially applied.
inline void apply_checkpoint(const Checkpoint& ck, const std::vector<Param*>& params) {
    if (ck.entries.size() != params.size())
        throw StateError("checkpoint: holds " + std::to_string(ck.entries.size()) +
                         " arrays, model has " + std::to_string(params.size()));
    for (Param* p : params) {
        bool found = false;
        for (const auto& [name, value] : ck.entries) {
            if (name != p->name) continue;
            if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
                throw ShapeError("checkpoint: shape mismatch for " + name);
            p->value = value;
            found = true;
            break;
        }
        if (!found) throw StateError("checkpoint: missing array for " + p->name);
    }
}

} // namespace groundqa
