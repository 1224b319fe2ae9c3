#pragma once

// Tensor archive: a plain-text index plus a raw little-endian float32 blob.
//
//   <name>.index                      <name>.bin
//   svdamage-archive 1                float32 LE values, concatenated
//   <path> <offset> <d0>x<d1>x...     in index order; offsets count floats
//
// Paths are canonical layer paths; a scalar has shape "1".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "svdamage/backbones/factory.hpp"
#include "svdamage/core/tensor.hpp"
#include "svdamage/fusion/fusion.hpp"

namespace svdamage {

using TensorArchive = std::map<std::string, Tensor<float>>;

inline std::filesystem::path archive_blob_path(const std::filesystem::path& index_path) {
    auto p = index_path;
    p.replace_extension(".bin");
    return p;
}

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline Shape parse_shape(const std::string& s) {
    Shape out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, 'x')) {
        require(!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos,
                "archive: bad shape '" + s + "'");
        out.push_back(std::stoul(tok));
    }
    return out;
}

} // namespace detail

inline void save_archive(const std::filesystem::path& index_path, const TensorArchive& tensors) {
    std::ofstream idx(index_path);
    std::ofstream bin(archive_blob_path(index_path), std::ios::binary);
    if (!idx || !bin) throw RuntimeFailure("cannot write archive " + index_path.string());
    idx << "svdamage-archive 1\n";
    std::size_t offset = 0;
    for (const auto& [path, t] : tensors) {
        std::string dims;
        for (std::size_t i = 0; i < t.rank(); ++i) dims += (i ? "x" : "") + std::to_string(t.dim(i));
        if (dims.empty()) dims = "1";
        idx << path << ' ' << offset << ' ' << dims << '\n';
        for (float v : t.values()) {
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            u = detail::to_le(u);
            bin.write(reinterpret_cast<const char*>(&u), 4);
        }
        offset += t.size();
    }
    if (!idx || !bin) throw RuntimeFailure("failed writing archive " + index_path.string());
}

inline TensorArchive read_archive(const std::filesystem::path& index_path) {
    std::ifstream idx(index_path);
    if (!idx) throw ValidationError("cannot open archive index " + index_path.string());
    std::string header;
    std::getline(idx, header);
    require(header == "svdamage-archive 1", "archive " + index_path.string() + ": unrecognized header");
    std::ifstream bin(archive_blob_path(index_path), std::ios::binary);
    if (!bin) throw ValidationError("cannot open archive blob " + archive_blob_path(index_path).string());
    bin.seekg(0, std::ios::end);
    const auto blob_floats = static_cast<std::size_t>(bin.tellg()) / 4;
    TensorArchive out;
    std::string line;
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string path, dims;
        std::size_t offset = 0;
        require(static_cast<bool>(ls >> path >> offset >> dims), "archive: malformed index line '" + line + "'");
        Shape shape = detail::parse_shape(dims);
        const std::size_t n = shape_numel(shape);
        require(offset + n <= blob_floats, "archive: entry " + path + " runs past the end of the blob");
        std::vector<float> vals(n);
        bin.seekg(static_cast<std::streamoff>(offset * 4));
        for (auto& v : vals) {
            std::uint32_t u;
            bin.read(reinterpret_cast<char*>(&u), 4);
            u = detail::to_le(u);
            std::memcpy(&v, &u, 4);
        }
        require(out.emplace(path, Tensor<float>(shape, std::move(vals))).second, "archive: duplicate entry " + path);
    }
    return out;
}

// Named backbone parameters bound from an archive.
struct BackboneWeights {
    TensorArchive tensors;
    std::vector<std::string> unused; // archive entries the config does not declare
    std::vector<std::string> adapted; // entries rewritten on load (6-channel stem)
    bool frozen = false;
};

inline bool is_stem_weight(const std::string& path) {
    return path == "stem.0.weight" || path == "patch_embed.proj.weight";
}

// Binds every parameter the config declares. A 3-channel stem kernel is
// widened when the config asks for 6 input channels.
inline BackboneWeights load_weights(const TensorArchive& archive, const BackboneConfig& config) {
    auto net = make_backbone<float>(config);
    BackboneWeights w;
    std::map<std::string, bool> used;
    for (auto* p : net->parameters()) {
        auto it = archive.find(p->path);
        if (it == archive.end()) throw ValidationError("weights archive is missing layer " + p->path);
        used[p->path] = true;
        if (it->second.shape() == p->value.shape()) {
            w.tensors.emplace(p->path, it->second);
            continue;
        }
        if (is_stem_weight(p->path) && config.input_channels == 6 && it->second.rank() == 4 &&
            it->second.dim(1) == 3) {
            Tensor<float> widened = duplicate_stem_weight(it->second);
            if (widened.shape() == p->value.shape()) {
                w.tensors.emplace(p->path, std::move(widened));
                w.adapted.push_back(p->path);
                continue;
            }
        }
        throw ValidationError("weights archive shape mismatch at " + p->path + ": archive " +
                              shape_str(it->second.shape()) + ", model " + shape_str(p->value.shape()));
    }
    for (const auto& [path, t] : archive)
        if (!used.count(path)) w.unused.push_back(path);
    return w;
}

inline BackboneWeights load_weights(const std::filesystem::path& archive_path, const BackboneConfig& config) {
    return load_weights(read_archive(archive_path), config);
}

inline BackboneWeights freeze(BackboneWeights w) {
    w.frozen = true;
    return w;
}

template <typename T>
void apply_weights(Backbone<T>& net, const BackboneWeights& w) {
    for (auto* p : net.parameters()) {
        auto it = w.tensors.find(p->path);
        if (it == w.tensors.end()) throw ValidationError("weights lack layer " + p->path);
        require(it->second.shape() == p->value.shape(), "weights shape mismatch at " + p->path);
        p->value = it->second.template cast<T>();
        p->frozen = w.frozen;
    }
}

template <typename T>
TensorArchive export_weights(Backbone<T>& net) {
    TensorArchive out;
    for (auto* p : net.parameters()) out.emplace(p->path, p->value.template cast<float>());
    return out;
}

} // namespace svdamage
