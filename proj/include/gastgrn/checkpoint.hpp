#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gastgrn/io.hpp"
#include "gastgrn/parameters.hpp"

namespace gastgrn {

using json = nlohmann::json;

inline constexpr std::string_view kCheckpointFormat = "gastgrn-checkpoint";
inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kBlobName = "params.bin";

/// Writes `manifest.json` (names, shapes, byte offsets, plus `extra` fields)
/// and `params.bin` (little-endian float64 in manifest order) under `dir`.
inline void save_checkpoint(const std::filesystem::path& dir, const ParameterStore& store, const json& extra = json::object()) {
    json manifest = extra.is_object() ? extra : json::object();
    manifest["format"] = kCheckpointFormat;
    manifest["version"] = 1;
    manifest["blob"] = kBlobName;
    json params = json::array();
    std::string blob;
    blob.reserve(store.total_elements() * 8);
    for (const auto& e : store.entries()) {
        params.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", blob.size()}});
        for (double v : e.tensor.values()) append_le_f64(blob, v);
    }
    manifest["parameters"] = std::move(params);
    write_file_atomic(dir / kBlobName, blob);
    write_file_atomic(dir / kManifestName, manifest.dump(2) + "\n");
}

inline std::filesystem::path manifest_path(const std::filesystem::path& p) {
    return std::filesystem::is_directory(p) ? p / kManifestName : p;
}

inline json read_manifest(const std::filesystem::path& p) {
    const auto path = manifest_path(p);
    json manifest;
    try {
        manifest = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": invalid manifest: " + e.what());
    }
    if (!manifest.is_object() || manifest.value("format", "") != kCheckpointFormat) {
        throw DataError(path.string() + ": not a checkpoint manifest");
    }
    return manifest;
}

/// Fills `store` from a checkpoint; names and shapes must match exactly.
inline void load_checkpoint(const std::filesystem::path& p, ParameterStore& store) {
    const auto path = manifest_path(p);
    const json manifest = read_manifest(path);
    const std::string blob = read_file(path.parent_path() / manifest.at("blob").get<std::string>());
    const auto& params = manifest.at("parameters");
    if (params.size() != store.size()) {
        throw DataError("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                        std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& entry = store.entries()[i];
        const auto name = params[i].at("name").get<std::string>();
        const auto shape = params[i].at("shape").get<Shape>();
        const auto offset = params[i].at("offset").get<std::size_t>();
        if (name != entry.name || shape != entry.tensor.shape()) {
            throw DataError("checkpoint parameter " + name + " " + to_string(shape) + " does not match " + entry.name +
                            " " + to_string(entry.tensor.shape()));
        }
        auto values = entry.tensor.mutable_values();
        if (offset + values.size() * 8 > blob.size()) throw DataError("checkpoint blob truncated at " + name);
        for (std::size_t j = 0; j < values.size(); ++j) values[j] = read_le_f64(blob.data() + offset + j * 8);
    }
}

}  // namespace gastgrn
