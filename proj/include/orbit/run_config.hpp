#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include "orbit/degrade.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/model.hpp"
#include "orbit/perceptual.hpp"
#include "orbit/trainer.hpp"

namespace orbit {

// One JSON document with section objects {degrade, model, train, loss,
// paths}. Parsing is strict: unknown keys anywhere are rejected. Every run
// echoes the fully resolved config (defaults filled in) to its output
// directory, so a run is reproducible from that echo plus its inputs.
struct RunConfig {
    int version = 1;
    DegradationRecipe degrade;
    ModelConfig model;
    TrainConfig train;

    struct Paths {
        std::optional<std::string> clean_dir;
        std::optional<std::string> out_dir;
        std::optional<std::string> manifest;
        std::optional<std::string> weights;
        std::optional<std::string> weights_cache;
    } paths;

    static RunConfig from_json(const Json& j) {
        RunConfig c;
        check_keys(j, {"version", "degrade", "model", "train", "loss", "paths"}, "config");
        c.version = get_or<int>(j, "version", 1);
        if (c.version != 1) throw ConfigError("config: unsupported version");
        if (j.contains("degrade")) c.degrade = recipe_from_json(j.at("degrade"));
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
        if (j.contains("loss")) c.train.loss = LossConfig::from_json(j.at("loss"));
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            check_keys(p, {"clean_dir", "out_dir", "manifest", "weights", "weights_cache"}, "paths");
            auto opt = [&p](const char* key) -> std::optional<std::string> {
                if (!p.contains(key) || p.at(key).is_null()) return std::nullopt;
                return p.at(key).get<std::string>();
            };
            c.paths.clean_dir = opt("clean_dir");
            c.paths.out_dir = opt("out_dir");
            c.paths.manifest = opt("manifest");
            c.paths.weights = opt("weights");
            c.paths.weights_cache = opt("weights_cache");
        }
        c.validate();
        return c;
    }

    static RunConfig from_file(const std::filesystem::path& path) { return from_json(load_json_file(path)); }

    void validate() const {
        degrade.validate();
        model.validate();
        train.validate();
    }

    Json to_json() const {
        auto path_json = [](const std::optional<std::string>& p) { return p ? Json(*p) : Json(nullptr); };
        return Json{{"version", version},
                    {"degrade", recipe_to_json(degrade)},
                    {"model", model.to_json()},
                    {"train", train.to_json()},
                    {"loss", train.loss.to_json()},
                    {"paths",
                     {{"clean_dir", path_json(paths.clean_dir)},
                      {"out_dir", path_json(paths.out_dir)},
                      {"manifest", path_json(paths.manifest)},
                      {"weights", path_json(paths.weights)},
                      {"weights_cache", path_json(paths.weights_cache)}}}};
    }

    // Weights cache resolution: explicit config wins, then the
    // ORBIT_RESTORE_WEIGHTS_CACHE environment variable.
    std::optional<std::filesystem::path> resolve_weights_cache() const {
        if (paths.weights_cache) return std::filesystem::path(*paths.weights_cache);
        if (const char* env = std::getenv("ORBIT_RESTORE_WEIGHTS_CACHE")) return std::filesystem::path(env);
        return std::nullopt;
    }
};

}  // namespace orbit
