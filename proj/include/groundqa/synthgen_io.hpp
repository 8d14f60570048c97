#pragma once

// Dataset container: a versioned binary file holding a JSON manifest (config
// echo, split listings, per-instance metadata and array locations) followed
// by one blob of little-endian float32 arrays and byte-packed masks.
//
//   "GQDS" | u32 version | u64 manifest_len | manifest | u64 blob_len | blob

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundqa/synthgen.hpp"

namespace groundqa {

static_assert(std::endian::native == std::endian::little,
              "dataset container assumes a little-endian host");

namespace detail {

constexpr char kDatasetMagic[4] = {'G', 'Q', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

inline void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

inline void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t read_u32(const std::string& buf, std::size_t& at) {
    if (at + 4 > buf.size()) throw StateError("dataset file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[at + std::size_t(i)])) << (8 * i);
    at += 4;
    return v;
}

inline std::uint64_t read_u64(const std::string& buf, std::size_t& at) {
    if (at + 8 > buf.size()) throw StateError("dataset file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[at + std::size_t(i)])) << (8 * i);
    at += 8;
    return v;
}

// Appends a matrix row-major as float32; returns its byte offset.
inline std::uint64_t blob_put_mat(std::string& blob, const Mat& m) {
    std::uint64_t off = blob.size();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            float f = static_cast<float>(m(r, c));
            char b[4];
            std::memcpy(b, &f, 4);
            blob.append(b, 4);
        }
    return off;
}

inline Mat blob_get_mat(const std::string& blob, std::uint64_t off, Eigen::Index rows,
                        Eigen::Index cols) {
    std::uint64_t need = off + std::uint64_t(rows) * std::uint64_t(cols) * 4;
    if (need > blob.size()) throw StateError("dataset blob truncated");
    Mat m(rows, cols);
    std::size_t at = std::size_t(off);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            float f;
            std::memcpy(&f, blob.data() + at, 4);
            m(r, c) = double(f);
            at += 4;
        }
    return m;
}

// Byte-packs a 0/1 mask, least-significant bit first within each byte.
inline std::uint64_t blob_put_mask(std::string& blob, const std::vector<std::uint8_t>& mask) {
    std::uint64_t off = blob.size();
    std::size_t nbytes = (mask.size() + 7) / 8;
    for (std::size_t b = 0; b < nbytes; ++b) {
        std::uint8_t byte = 0;
        for (std::size_t bit = 0; bit < 8; ++bit) {
            std::size_t k = b * 8 + bit;
            if (k < mask.size() && mask[k]) byte |= std::uint8_t(1u << bit);
        }
        blob.push_back(char(byte));
    }
    return off;
}

inline std::vector<std::uint8_t> blob_get_mask(const std::string& blob, std::uint64_t off,
                                               std::size_t n) {
    std::size_t nbytes = (n + 7) / 8;
    if (off + nbytes > blob.size()) throw StateError("dataset blob truncated");
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t k = 0; k < n; ++k)
        mask[k] = (std::uint8_t(blob[std::size_t(off) + k / 8]) >> (k % 8)) & 1u;
    return mask;
}

inline nlohmann::json mat_entry(std::uint64_t off, const Mat& m) {
    return {{"offset", off}, {"rows", m.rows()}, {"cols", m.cols()}};
}

inline Mat mat_from_entry(const std::string& blob, const nlohmann::json& e) {
    return blob_get_mat(blob, e.at("offset").get<std::uint64_t>(),
                        e.at("rows").get<Eigen::Index>(), e.at("cols").get<Eigen::Index>());
}

} // namespace detail

inline void save_dataset(const DatasetBundle& bundle, const std::string& path) {
    using nlohmann::json;
    std::string blob;
    json manifest;
    manifest["format_version"] = detail::kDatasetVersion;

    const GenConfig& c = bundle.config;
    manifest["config"] = {
        {"num_videos", c.num_videos},   {"K", c.K},
        {"d", c.d},                     {"L", c.L},
        {"num_answers", c.num_answers}, {"span_min", c.causal_span.min_clips},
        {"span_max", c.causal_span.max_clips}, {"bias_rho", c.bias_rho},
        {"noise_sigma", c.noise_sigma}, {"num_objects", c.num_objects},
        {"num_qtypes", c.num_qtypes},   {"seed", c.seed},
    };

    const Mechanism& m = bundle.mechanism;
    manifest["mechanism"] = {
        {"content_dims", m.content_dims},
        {"context_dims", m.context_dims},
        {"position_dims", m.position_dims},
        {"centroids", detail::mat_entry(detail::blob_put_mat(blob, m.centroids), m.centroids)},
        {"env_centroids",
         detail::mat_entry(detail::blob_put_mat(blob, m.env_centroids), m.env_centroids)},
        {"pos_codes", detail::mat_entry(detail::blob_put_mat(blob, m.pos_codes), m.pos_codes)},
        {"qtype_embed",
         detail::mat_entry(detail::blob_put_mat(blob, m.qtype_embed), m.qtype_embed)},
    };

    json splits = json::object();
    json instances = json::object();
    for (const std::string& name : split_names()) {
        json ids = json::array();
        for (const Instance& inst : bundle.split(name)) {
            ids.push_back(inst.video.id);
            json e;
            e["clips"] = detail::mat_entry(detail::blob_put_mat(blob, inst.video.clips),
                                           inst.video.clips);
            e["tokens"] = detail::mat_entry(detail::blob_put_mat(blob, inst.question.tokens),
                                            inst.question.tokens);
            e["mask"] = {{"offset", detail::blob_put_mask(blob, inst.video.causal_mask)},
                         {"len", inst.video.causal_mask.size()}};
            if (!inst.video.objects.empty()) {
                std::uint64_t off = blob.size();
                for (const Mat& obj : inst.video.objects) detail::blob_put_mat(blob, obj);
                e["objects"] = {{"offset", off},
                                {"K", inst.video.objects.size()},
                                {"S", inst.video.objects[0].rows()},
                                {"d", inst.video.objects[0].cols()}};
            }
            e["answer"] = inst.question.answer;
            e["qtype"] = inst.question.qtype;
            e["env_cluster"] = inst.env_cluster;
            instances[inst.video.id] = std::move(e);
        }
        splits[name] = std::move(ids);
    }
    manifest["splits"] = std::move(splits);
    manifest["instances"] = std::move(instances);

    std::string mtext = manifest.dump();
    std::string out;
    out.append(detail::kDatasetMagic, 4);
    detail::append_u32(out, detail::kDatasetVersion);
    detail::append_u64(out, mtext.size());
    out += mtext;
    detail::append_u64(out, blob.size());
    out += blob;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open dataset file for writing: " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw StateError("short write to dataset file: " + path);
}

inline DatasetBundle load_dataset(const std::string& path) {
    using nlohmann::json;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open dataset file: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    std::size_t at = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), detail::kDatasetMagic, 4) != 0)
        throw StateError("not a dataset file: " + path);
    at = 4;
    std::uint32_t version = detail::read_u32(buf, at);
    if (version != detail::kDatasetVersion)
        throw ConfigError("unsupported dataset format version " + std::to_string(version));
    std::uint64_t mlen = detail::read_u64(buf, at);
    if (at + mlen > buf.size()) throw StateError("dataset file truncated");
    json manifest = json::parse(buf.substr(at, std::size_t(mlen)));
    at += std::size_t(mlen);
    std::uint64_t blen = detail::read_u64(buf, at);
    if (at + blen > buf.size()) throw StateError("dataset file truncated");
    std::string blob = buf.substr(at, std::size_t(blen));

    DatasetBundle bundle;
    const json& jc = manifest.at("config");
    GenConfig& c = bundle.config;
    c.num_videos = jc.at("num_videos").get<int>();
    c.K = jc.at("K").get<int>();
    c.d = jc.at("d").get<int>();
    c.L = jc.at("L").get<int>();
    c.num_answers = jc.at("num_answers").get<int>();
    c.causal_span.min_clips = jc.at("span_min").get<int>();
    c.causal_span.max_clips = jc.at("span_max").get<int>();
    c.bias_rho = jc.at("bias_rho").get<double>();
    c.noise_sigma = jc.at("noise_sigma").get<double>();
    c.num_objects = jc.at("num_objects").get<int>();
    c.num_qtypes = jc.at("num_qtypes").get<int>();
    c.seed = jc.at("seed").get<std::uint64_t>();

    const json& jm = manifest.at("mechanism");
    Mechanism& m = bundle.mechanism;
    m.content_dims = jm.at("content_dims").get<int>();
    m.context_dims = jm.at("context_dims").get<int>();
    m.position_dims = jm.at("position_dims").get<int>();
    m.centroids = detail::mat_from_entry(blob, jm.at("centroids"));
    m.env_centroids = detail::mat_from_entry(blob, jm.at("env_centroids"));
    m.pos_codes = detail::mat_from_entry(blob, jm.at("pos_codes"));
    m.qtype_embed = detail::mat_from_entry(blob, jm.at("qtype_embed"));

    const json& jinst = manifest.at("instances");
    for (const std::string& name : split_names()) {
        std::vector<Instance>* out = nullptr;
        if (name == "train") out = &bundle.train;
        else if (name == "val") out = &bundle.val;
        else if (name == "test_iid") out = &bundle.test_iid;
        else out = &bundle.test_ood;
        for (const auto& jid : manifest.at("splits").at(name)) {
            std::string id = jid.get<std::string>();
            const json& e = jinst.at(id);
            Instance inst;
            inst.video.id = id;
            inst.video.clips = detail::mat_from_entry(blob, e.at("clips"));
            inst.question.tokens = detail::mat_from_entry(blob, e.at("tokens"));
            inst.video.causal_mask = detail::blob_get_mask(
                blob, e.at("mask").at("offset").get<std::uint64_t>(),
                e.at("mask").at("len").get<std::size_t>());
            if (e.contains("objects")) {
                const json& jo = e.at("objects");
                std::uint64_t off = jo.at("offset").get<std::uint64_t>();
                std::size_t K = jo.at("K").get<std::size_t>();
                Eigen::Index S = jo.at("S").get<Eigen::Index>();
                Eigen::Index d = jo.at("d").get<Eigen::Index>();
                inst.video.objects.reserve(K);
                for (std::size_t k = 0; k < K; ++k) {
                    inst.video.objects.push_back(detail::blob_get_mat(blob, off, S, d));
                    off += std::uint64_t(S) * std::uint64_t(d) * 4;
                }
            }
            inst.question.answer = e.at("answer").get<int>();
            inst.question.qtype = e.at("qtype").get<int>();
            inst.env_cluster = e.at("env_cluster").get<int>();
            out->push_back(std::move(inst));
        }
    }
    return bundle;
}

} // namespace groundqa
