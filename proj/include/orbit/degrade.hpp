#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/image.hpp"
#include "orbit/image_io.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/rng.hpp"

namespace orbit {

// ---------------------------------------------------------------------------
// Degradation primitives. All use edge-inclusive reflect padding so borders
// keep local statistics instead of fading to black.
// ---------------------------------------------------------------------------

// Truncated normalized Gaussian, kernel size 2*ceil(3*sigma)+1, applied
// separably. sigma == 0 is the identity.
inline ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
    if (sigma < 0) throw ParamError("gaussian_blur: sigma must be >= 0");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    if (radius == 0) return img;

    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
        sum += v;
    }
    for (float& v : kernel) v = static_cast<float>(v / sum);

    ImageTensor tmp(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<std::size_t>(k + radius)] * img.at(y, reflect_index(x + k, img.width), c);
                tmp.at(y, x, c) = acc;
            }
    ImageTensor out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(reflect_index(y + k, img.height), x, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

// Line-segment kernel: round(length) unit-spaced taps along the given angle
// (degrees, 0 = horizontal), rasterized by rounding to the nearest cell and
// normalized. length rounding to 1 gives the identity.
inline ImageTensor motion_blur(const ImageTensor& img, double length, double angle_deg) {
    if (length < 1.0) throw ParamError("motion_blur: length must be >= 1");
    const int taps = std::max<int>(1, static_cast<int>(std::lround(length)));
    if (taps == 1) return img;

    const double theta = angle_deg * std::numbers::pi / 180.0;
    const double dx = std::cos(theta);
    const double dy = std::sin(theta);

    struct Tap {
        int dy, dx;
        float weight;
    };
    std::vector<Tap> cells;
    for (int i = 0; i < taps; ++i) {
        const double t = i - (taps - 1) / 2.0;
        const int px = static_cast<int>(std::lround(t * dx));
        const int py = static_cast<int>(std::lround(t * dy));
        bool merged = false;
        for (Tap& c : cells)
            if (c.dx == px && c.dy == py) {
                c.weight += 1.0f;
                merged = true;
                break;
            }
        if (!merged) cells.push_back({py, px, 1.0f});
    }
    for (Tap& c : cells) c.weight /= static_cast<float>(taps);

    ImageTensor out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (const Tap& tap : cells)
                    acc += tap.weight * img.at(reflect_index(y + tap.dy, img.height), reflect_index(x + tap.dx, img.width), c);
                out.at(y, x, c) = acc;
            }
    return out;
}

// out = clamp(gain * v^gamma, 0, 1). gain > 1 overexposes and saturates
// highlights; gain < 1 underexposes; gamma reshapes midtone contrast.
inline ImageTensor adjust_exposure(const ImageTensor& img, double gain, double gamma) {
    if (gain <= 0 || gamma <= 0) throw ParamError("adjust_exposure: gain and gamma must be > 0");
    ImageTensor out(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = gain * std::pow(static_cast<double>(img.data[i]), gamma);
        out.data[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    return out;
}

// I.i.d. zero-mean Gaussian noise per element from SplitMix64(seed) in
// row-major, channel-innermost order, then clamp to [0,1].
inline ImageTensor add_gaussian_noise(const ImageTensor& img, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw ParamError("add_gaussian_noise: sigma must be >= 0");
    if (sigma == 0) return img;
    SplitMix64 rng(seed);
    ImageTensor out(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = img.data[i] + sigma * rng.normal();
        out.data[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Recipes and records
// ---------------------------------------------------------------------------

struct DegradationRecipe {
    std::uint64_t seed = 42;
    int variants_per_image = 3;

    struct GaussianBlurCfg {
        double probability = 0.5;
        double sigma_lo = 0.5, sigma_hi = 3.0;
    } gaussian_blur;

    struct MotionBlurCfg {
        double probability = 0.5;
        double length_lo = 3.0, length_hi = 15.0;
        double angle_lo = 0.0, angle_hi = 180.0;  // degrees, [0, 180)
    } motion_blur;

    struct ExposureCfg {
        double probability = 0.5;
        double gain_lo = 0.3, gain_hi = 2.5;
        double gamma_lo = 0.6, gamma_hi = 1.6;
    } exposure;

    struct NoiseCfg {
        double probability = 0.5;
        double sigma_lo = 0.01, sigma_hi = 0.08;
    } noise;

    void validate() const {
        auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob_ok(gaussian_blur.probability) || !prob_ok(motion_blur.probability) ||
            !prob_ok(exposure.probability) || !prob_ok(noise.probability))
            throw ParamError("recipe: probabilities must be in [0,1]");
        if (gaussian_blur.sigma_lo < 0 || gaussian_blur.sigma_lo > gaussian_blur.sigma_hi)
            throw ParamError("recipe: bad gaussian blur sigma range");
        if (motion_blur.length_lo < 1 || motion_blur.length_lo > motion_blur.length_hi)
            throw ParamError("recipe: bad motion blur length range");
        if (motion_blur.angle_lo < 0 || motion_blur.angle_lo > motion_blur.angle_hi || motion_blur.angle_hi > 180.0)
            throw ParamError("recipe: bad motion blur angle range");
        if (exposure.gain_lo <= 0 || exposure.gain_lo > exposure.gain_hi)
            throw ParamError("recipe: bad exposure gain range");
        if (exposure.gamma_lo <= 0 || exposure.gamma_lo > exposure.gamma_hi)
            throw ParamError("recipe: bad exposure gamma range");
        if (noise.sigma_lo < 0 || noise.sigma_lo > noise.sigma_hi)
            throw ParamError("recipe: bad noise sigma range");
        if (variants_per_image < 1) throw ParamError("recipe: variants_per_image must be >= 1");
        if (gaussian_blur.probability == 0 && motion_blur.probability == 0 && exposure.probability == 0 &&
            noise.probability == 0)
            throw ParamError("recipe: at least one degradation probability must be > 0");
    }
};

// One concretely applied degradation step.
struct AppliedOp {
    std::string kind;  // "motion_blur" | "gaussian_blur" | "exposure" | "noise"
    double length = 0, angle = 0;   // motion_blur
    double sigma = 0;               // gaussian_blur / noise
    double gain = 0, gamma = 0;     // exposure
    std::uint64_t noise_seed = 0;   // noise
};

// Everything needed to regenerate one degraded image bit-exactly from its
// source.
struct DegradationRecord {
    std::string source_image;  // path relative to the dataset root
    int variant_index = 0;
    std::uint64_t sub_seed = 0;
    std::vector<AppliedOp> applied;
};

inline ImageTensor apply_op(const ImageTensor& img, const AppliedOp& op) {
    if (op.kind == "motion_blur") return motion_blur(img, op.length, op.angle);
    if (op.kind == "gaussian_blur") return gaussian_blur(img, op.sigma);
    if (op.kind == "exposure") return adjust_exposure(img, op.gain, op.gamma);
    if (op.kind == "noise") return add_gaussian_noise(img, op.sigma, op.noise_seed);
    throw ParamError("unknown degradation kind: " + op.kind);
}

// Replays a record against its source image; bit-exact with the original
// generation.
inline ImageTensor replay_record(const ImageTensor& source, const DegradationRecord& record) {
    ImageTensor img = source;
    for (const AppliedOp& op : record.applied) img = apply_op(img, op);
    return img;
}

// Samples and applies degradations in fixed order (motion blur, Gaussian
// blur, exposure, noise — optics, then sensor response, then sensor noise).
// Inclusion is an independent Bernoulli per degradation; the draw repeats
// until at least one is included, so a degraded image never equals its
// target by construction. All randomness comes from sub_seed.
inline std::pair<ImageTensor, DegradationRecord> apply_recipe(const ImageTensor& img, const DegradationRecipe& recipe,
                                                              std::uint64_t sub_seed) {
    recipe.validate();
    SplitMix64 rng(sub_seed);

    bool inc_motion = false, inc_gauss = false, inc_expo = false, inc_noise = false;
    do {
        inc_motion = rng.bernoulli(recipe.motion_blur.probability);
        inc_gauss = rng.bernoulli(recipe.gaussian_blur.probability);
        inc_expo = rng.bernoulli(recipe.exposure.probability);
        inc_noise = rng.bernoulli(recipe.noise.probability);
    } while (!(inc_motion || inc_gauss || inc_expo || inc_noise));

    DegradationRecord record;
    record.sub_seed = sub_seed;
    if (inc_motion) {
        AppliedOp op;
        op.kind = "motion_blur";
        op.length = rng.uniform(recipe.motion_blur.length_lo, recipe.motion_blur.length_hi);
        op.angle = rng.uniform(recipe.motion_blur.angle_lo, recipe.motion_blur.angle_hi);
        record.applied.push_back(op);
    }
    if (inc_gauss) {
        AppliedOp op;
        op.kind = "gaussian_blur";
        op.sigma = rng.uniform(recipe.gaussian_blur.sigma_lo, recipe.gaussian_blur.sigma_hi);
        record.applied.push_back(op);
    }
    if (inc_expo) {
        AppliedOp op;
        op.kind = "exposure";
        op.gain = rng.uniform(recipe.exposure.gain_lo, recipe.exposure.gain_hi);
        op.gamma = rng.uniform(recipe.exposure.gamma_lo, recipe.exposure.gamma_hi);
        record.applied.push_back(op);
    }
    if (inc_noise) {
        AppliedOp op;
        op.kind = "noise";
        op.sigma = rng.uniform(recipe.noise.sigma_lo, recipe.noise.sigma_hi);
        op.noise_seed = rng.next();
        record.applied.push_back(op);
    }
    return {replay_record(img, record), record};
}

// ---------------------------------------------------------------------------
// Dataset building
// ---------------------------------------------------------------------------

struct ManifestPair {
    std::string degraded;  // relative to the manifest directory
    std::string target;
    DegradationRecord record;
};

struct DatasetManifest {
    int version = 1;
    DegradationRecipe recipe;
    std::vector<ManifestPair> pairs;
};

// --- JSON mapping -----------------------------------------------------------

inline Json recipe_to_json(const DegradationRecipe& r) {
    return Json{
        {"seed", r.seed},
        {"variants_per_image", r.variants_per_image},
        {"motion_blur",
         {{"probability", r.motion_blur.probability},
          {"length_range", {r.motion_blur.length_lo, r.motion_blur.length_hi}},
          {"angle_range", {r.motion_blur.angle_lo, r.motion_blur.angle_hi}}}},
        {"gaussian_blur",
         {{"probability", r.gaussian_blur.probability},
          {"sigma_range", {r.gaussian_blur.sigma_lo, r.gaussian_blur.sigma_hi}}}},
        {"exposure",
         {{"probability", r.exposure.probability},
          {"gain_range", {r.exposure.gain_lo, r.exposure.gain_hi}},
          {"gamma_range", {r.exposure.gamma_lo, r.exposure.gamma_hi}}}},
        {"noise",
         {{"probability", r.noise.probability},
          {"sigma_range", {r.noise.sigma_lo, r.noise.sigma_hi}}}},
    };
}

inline void range_from_json(const Json& j, const char* key, double& lo, double& hi, const std::string& ctx) {
    if (!j.contains(key)) return;
    const auto& arr = j.at(key);
    if (!arr.is_array() || arr.size() != 2) throw ConfigError(ctx + "." + key + ": expected [lo, hi]");
    lo = arr[0].get<double>();
    hi = arr[1].get<double>();
}

inline DegradationRecipe recipe_from_json(const Json& j) {
    DegradationRecipe r;
    check_keys(j, {"seed", "variants_per_image", "motion_blur", "gaussian_blur", "exposure", "noise"}, "degrade");
    r.seed = get_or<std::uint64_t>(j, "seed", r.seed);
    r.variants_per_image = get_or<int>(j, "variants_per_image", r.variants_per_image);
    if (j.contains("motion_blur")) {
        const auto& m = j.at("motion_blur");
        check_keys(m, {"probability", "length_range", "angle_range"}, "degrade.motion_blur");
        r.motion_blur.probability = get_or<double>(m, "probability", r.motion_blur.probability);
        range_from_json(m, "length_range", r.motion_blur.length_lo, r.motion_blur.length_hi, "degrade.motion_blur");
        range_from_json(m, "angle_range", r.motion_blur.angle_lo, r.motion_blur.angle_hi, "degrade.motion_blur");
    }
    if (j.contains("gaussian_blur")) {
        const auto& g = j.at("gaussian_blur");
        check_keys(g, {"probability", "sigma_range"}, "degrade.gaussian_blur");
        r.gaussian_blur.probability = get_or<double>(g, "probability", r.gaussian_blur.probability);
        range_from_json(g, "sigma_range", r.gaussian_blur.sigma_lo, r.gaussian_blur.sigma_hi, "degrade.gaussian_blur");
    }
    if (j.contains("exposure")) {
        const auto& e = j.at("exposure");
        check_keys(e, {"probability", "gain_range", "gamma_range"}, "degrade.exposure");
        r.exposure.probability = get_or<double>(e, "probability", r.exposure.probability);
        range_from_json(e, "gain_range", r.exposure.gain_lo, r.exposure.gain_hi, "degrade.exposure");
        range_from_json(e, "gamma_range", r.exposure.gamma_lo, r.exposure.gamma_hi, "degrade.exposure");
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        check_keys(n, {"probability", "sigma_range"}, "degrade.noise");
        r.noise.probability = get_or<double>(n, "probability", r.noise.probability);
        range_from_json(n, "sigma_range", r.noise.sigma_lo, r.noise.sigma_hi, "degrade.noise");
    }
    return r;
}

inline Json applied_op_to_json(const AppliedOp& op) {
    Json j{{"kind", op.kind}};
    if (op.kind == "motion_blur") {
        j["length"] = op.length;
        j["angle"] = op.angle;
    } else if (op.kind == "gaussian_blur") {
        j["sigma"] = op.sigma;
    } else if (op.kind == "exposure") {
        j["gain"] = op.gain;
        j["gamma"] = op.gamma;
    } else if (op.kind == "noise") {
        j["sigma"] = op.sigma;
        j["seed"] = op.noise_seed;
    }
    return j;
}

inline AppliedOp applied_op_from_json(const Json& j) {
    AppliedOp op;
    op.kind = get_required<std::string>(j, "kind", "record.applied");
    op.length = get_or<double>(j, "length", 0.0);
    op.angle = get_or<double>(j, "angle", 0.0);
    op.sigma = get_or<double>(j, "sigma", 0.0);
    op.gain = get_or<double>(j, "gain", 0.0);
    op.gamma = get_or<double>(j, "gamma", 0.0);
    op.noise_seed = get_or<std::uint64_t>(j, "seed", 0);
    return op;
}

inline Json record_to_json(const DegradationRecord& r) {
    Json ops = Json::array();
    for (const AppliedOp& op : r.applied) ops.push_back(applied_op_to_json(op));
    return Json{{"source_image", r.source_image},
                {"variant_index", r.variant_index},
                {"sub_seed", r.sub_seed},
                {"applied", ops}};
}

inline DegradationRecord record_from_json(const Json& j) {
    DegradationRecord r;
    r.source_image = get_required<std::string>(j, "source_image", "record");
    r.variant_index = get_required<int>(j, "variant_index", "record");
    r.sub_seed = get_required<std::uint64_t>(j, "sub_seed", "record");
    for (const auto& op : j.at("applied")) r.applied.push_back(applied_op_from_json(op));
    return r;
}

inline Json manifest_to_json(const DatasetManifest& m) {
    Json pairs = Json::array();
    for (const ManifestPair& p : m.pairs) {
        pairs.push_back(Json{{"degraded", p.degraded}, {"target", p.target}, {"record", record_to_json(p.record)}});
    }
    return Json{{"version", m.version}, {"recipe", recipe_to_json(m.recipe)}, {"pairs", pairs}};
}

inline DatasetManifest manifest_from_json(const Json& j) {
    DatasetManifest m;
    m.version = get_required<int>(j, "version", "manifest");
    m.recipe = recipe_from_json(j.at("recipe"));
    for (const auto& p : j.at("pairs")) {
        ManifestPair pair;
        pair.degraded = get_required<std::string>(p, "degraded", "manifest.pairs");
        pair.target = get_required<std::string>(p, "target", "manifest.pairs");
        pair.record = record_from_json(p.at("record"));
        m.pairs.push_back(std::move(pair));
    }
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    return manifest_from_json(load_json_file(path));
}

// --- builder -----------------------------------------------------------------

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::exists(dir)) throw NotFoundError("no such directory: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

// Builds variants_per_image degraded copies of every clean image plus one
// re-encoded PNG target per source, all paths relative to out_dir. Variant j
// of source i draws from the substream SplitMix64::derive(recipe.seed,
// i * variants_per_image + j), so the build is a pure function of
// (clean_dir contents, recipe).
inline DatasetManifest build_dataset(const std::filesystem::path& clean_dir, const std::filesystem::path& out_dir,
                                     const DegradationRecipe& recipe) {
    recipe.validate();
    const std::vector<std::filesystem::path> sources = list_images(clean_dir);
    if (sources.empty()) throw EmptyDatasetError("no decodable images in " + clean_dir.string());

    std::filesystem::create_directories(out_dir / "degraded");
    std::filesystem::create_directories(out_dir / "targets");

    DatasetManifest manifest;
    manifest.recipe = recipe;
    char name[64];
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const ImageTensor clean = load_image(sources[i]);
        const std::string stem = sources[i].stem().string();

        std::snprintf(name, sizeof(name), "%04zu_", i);
        const std::string target_rel = "targets/" + std::string(name) + stem + ".png";
        save_image(clean, out_dir / target_rel);

        for (int j = 0; j < recipe.variants_per_image; ++j) {
            const std::uint64_t sub_seed =
                SplitMix64::derive(recipe.seed, i * static_cast<std::uint64_t>(recipe.variants_per_image) +
                                                    static_cast<std::uint64_t>(j));
            auto [degraded, record] = apply_recipe(clean, recipe, sub_seed);
            record.source_image = target_rel;
            record.variant_index = j;

            std::snprintf(name, sizeof(name), "%04zu_", i);
            const std::string degraded_rel = "degraded/" + std::string(name) + stem + "_v" + std::to_string(j) + ".png";
            save_image(degraded, out_dir / degraded_rel);
            manifest.pairs.push_back({degraded_rel, target_rel, std::move(record)});
        }
    }
    write_json_file(out_dir / "manifest.json", manifest_to_json(manifest));
    return manifest;
}

}  // namespace orbit
