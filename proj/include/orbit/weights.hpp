#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/tensor.hpp"

namespace orbit {

static_assert(std::endian::native == std::endian::little, "weight archives assume a little-endian host");

// Portable parameter set: weights.bin holds concatenated little-endian f32
// blobs, weights.json describes them. The manifest stores an FNV-1a hash of
// the blob so a mismatched json/bin pair is rejected instead of silently
// loading mixed data.

struct ArchiveEntry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;  // bytes into weights.bin
    std::uint64_t length = 0;  // bytes
};

struct ArchiveMetadata {
    std::string config_hash;  // hex of the producing ModelConfig hash
    std::int64_t step = 0;
    double val_loss = 0.0;
};

struct WeightArchive {
    int version = 1;
    ArchiveMetadata metadata;
    std::vector<ArchiveEntry> entries;
    std::vector<float> blob;

    const ArchiveEntry* find(const std::string& name) const {
        for (const ArchiveEntry& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }

    // Entry payload as a float span into the blob.
    const float* payload(const ArchiveEntry& e) const { return blob.data() + e.offset / sizeof(float); }

    template <typename T>
    void append(const std::string& name, const Tensor<T>& t) {
        ArchiveEntry e;
        e.name = name;
        e.shape = t.shape();
        e.offset = blob.size() * sizeof(float);
        e.length = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
        const std::size_t base = blob.size();
        blob.resize(base + static_cast<std::size_t>(t.numel()));
        for (std::int64_t i = 0; i < t.numel(); ++i) blob[base + static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
        entries.push_back(std::move(e));
    }

    template <typename T>
    Tensor<T> tensor(const ArchiveEntry& e) const {
        Tensor<T> t(e.shape);
        const float* src = payload(e);
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(src[i]);
        return t;
    }
};

inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

// Writes dir/weights.bin + dir/weights.json. Both files land via temp-file +
// rename, blob first, manifest second; the manifest's blob hash catches any
// torn combination.
inline void save_archive(const WeightArchive& a, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path bin_path = dir / "weights.bin";
    const std::filesystem::path json_path = dir / "weights.json";

    const std::size_t bytes = a.blob.size() * sizeof(float);
    {
        const std::filesystem::path tmp = bin_path.string() + ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(a.blob.data()), static_cast<std::streamsize>(bytes));
        if (!out) throw IoError("short write to " + tmp.string());
        out.close();
        std::filesystem::rename(tmp, bin_path);
    }

    Json entries = Json::array();
    for (const ArchiveEntry& e : a.entries) {
        entries.push_back(Json{{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"length", e.length}});
    }
    const Json j{{"version", a.version},
                 {"blob_bytes", bytes},
                 {"blob_fnv1a", hex64(fnv1a64(a.blob.data(), bytes))},
                 {"entries", entries},
                 {"metadata",
                  {{"config_hash", a.metadata.config_hash},
                   {"step", a.metadata.step},
                   {"val_loss", a.metadata.val_loss}}}};
    write_json_file(json_path, j);
}

inline WeightArchive load_archive(const std::filesystem::path& dir) {
    const std::filesystem::path bin_path = dir / "weights.bin";
    const std::filesystem::path json_path = dir / "weights.json";
    if (!std::filesystem::exists(json_path) || !std::filesystem::exists(bin_path))
        throw ArchiveError("missing weights.json/weights.bin in " + dir.string());

    Json j;
    try {
        j = load_json_file(json_path);
    } catch (const ConfigError& e) {
        throw ArchiveError(std::string("corrupt archive manifest: ") + e.what());
    }

    WeightArchive a;
    try {
        a.version = j.at("version").get<int>();
        const auto& meta = j.at("metadata");
        a.metadata.config_hash = meta.at("config_hash").get<std::string>();
        a.metadata.step = meta.at("step").get<std::int64_t>();
        a.metadata.val_loss = meta.at("val_loss").get<double>();
        for (const auto& je : j.at("entries")) {
            ArchiveEntry e;
            e.name = je.at("name").get<std::string>();
            e.shape = je.at("shape").get<std::vector<std::int64_t>>();
            e.offset = je.at("offset").get<std::uint64_t>();
            e.length = je.at("length").get<std::uint64_t>();
            a.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(std::string("corrupt archive manifest: ") + e.what());
    }

    const std::uint64_t expect_bytes = j.at("blob_bytes").get<std::uint64_t>();
    const std::uintmax_t actual_bytes = std::filesystem::file_size(bin_path);
    if (actual_bytes != expect_bytes) throw ArchiveError("weights.bin is truncated or oversized");
    if (expect_bytes % sizeof(float) != 0) throw ArchiveError("weights.bin length is not float-aligned");

    a.blob.resize(expect_bytes / sizeof(float));
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + bin_path.string());
    in.read(reinterpret_cast<char*>(a.blob.data()), static_cast<std::streamsize>(expect_bytes));
    if (in.gcount() != static_cast<std::streamsize>(expect_bytes)) throw ArchiveError("weights.bin is truncated");

    if (hex64(fnv1a64(a.blob.data(), expect_bytes)) != j.at("blob_fnv1a").get<std::string>())
        throw ArchiveError("weights.bin content does not match its manifest");

    std::uint64_t expected_numel = 0;
    for (const ArchiveEntry& e : a.entries) {
        std::uint64_t numel = 1;
        for (std::int64_t d : e.shape) numel *= static_cast<std::uint64_t>(d);
        if (e.length != numel * sizeof(float) || e.offset % sizeof(float) != 0 ||
            e.offset + e.length > expect_bytes)
            throw ArchiveError("archive entry out of bounds: " + e.name);
        expected_numel += numel;
    }
    (void)expected_numel;
    return a;
}

}  // namespace orbit
