#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "orbit/degrade.hpp"
#include "orbit/metrics.hpp"
#include "test_util.hpp"

using namespace orbit;
namespace fs = std::filesystem;

TEST_CASE("gaussian_blur: sigma 0 is the identity") {
    const ImageTensor img = testutil::random_image(9, 7, 21);
    const ImageTensor out = gaussian_blur(img, 0.0);
    REQUIRE(out.data == img.data);
}

TEST_CASE("gaussian_blur: constant image is unchanged") {
    const ImageTensor img(12, 12, 0.37f);
    const ImageTensor out = gaussian_blur(img, 2.0);
    for (float v : out.data) REQUIRE(v == Catch::Approx(0.37).margin(2e-6));
}

TEST_CASE("gaussian_blur: centered impulse reproduces the normalized kernel") {
    // Independent oracle: evaluate exp(-(x^2+y^2)/2sigma^2) on the 7x7 grid
    // and normalize.
    const double sigma = 1.0;
    ImageTensor img(7, 7, 0.0f);
    img.at(3, 3, 0) = img.at(3, 3, 1) = img.at(3, 3, 2) = 1.0f;

    double z = 0.0;
    double kernel[7][7];
    for (int y = -3; y <= 3; ++y)
        for (int x = -3; x <= 3; ++x) {
            kernel[y + 3][x + 3] = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            z += kernel[y + 3][x + 3];
        }

    const ImageTensor out = gaussian_blur(img, sigma);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) REQUIRE(out.at(y, x, 0) == Catch::Approx(kernel[y][x] / z).margin(1e-6));
}

TEST_CASE("gaussian_blur: negative sigma raises ParamError") {
    REQUIRE_THROWS_AS(gaussian_blur(ImageTensor(4, 4), -0.1), ParamError);
}

TEST_CASE("motion_blur: length 1 is the identity") {
    const ImageTensor img = testutil::random_image(8, 8, 22);
    REQUIRE(motion_blur(img, 1.0, 37.0).data == img.data);
}

TEST_CASE("motion_blur: constant image is unchanged") {
    const ImageTensor img(10, 10, 0.6f);
    const ImageTensor out = motion_blur(img, 7.0, 30.0);
    for (float v : out.data) REQUIRE(v == Catch::Approx(0.6).margin(2e-6));
}

TEST_CASE("motion_blur: horizontal 3-tap impulse response") {
    ImageTensor img(7, 7, 0.0f);
    img.at(3, 3, 0) = img.at(3, 3, 1) = img.at(3, 3, 2) = 1.0f;
    const ImageTensor out = motion_blur(img, 3.0, 0.0);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) {
            const float expected = (y == 3 && x >= 2 && x <= 4) ? 1.0f / 3.0f : 0.0f;
            REQUIRE(out.at(y, x, 0) == Catch::Approx(expected).margin(1e-6));
        }
}

TEST_CASE("motion_blur: length below 1 raises ParamError") {
    REQUIRE_THROWS_AS(motion_blur(ImageTensor(4, 4), 0.5, 0.0), ParamError);
}

TEST_CASE("adjust_exposure: identity, gain and saturation") {
    ImageTensor img(1, 1, 0.25f);
    REQUIRE(adjust_exposure(img, 1.0, 1.0).at(0, 0, 0) == Catch::Approx(0.25));
    REQUIRE(adjust_exposure(img, 2.0, 1.0).at(0, 0, 0) == Catch::Approx(0.5));
    ImageTensor half(1, 1, 0.5f);
    REQUIRE(adjust_exposure(half, 4.0, 1.0).at(0, 0, 0) == 1.0f);
    REQUIRE_THROWS_AS(adjust_exposure(img, 0.0, 1.0), ParamError);
    REQUIRE_THROWS_AS(adjust_exposure(img, 1.0, -2.0), ParamError);
}

TEST_CASE("add_gaussian_noise: sigma 0 is identity, same seed is bit-identical") {
    const ImageTensor img = testutil::random_image(16, 16, 23);
    REQUIRE(add_gaussian_noise(img, 0.0, 1).data == img.data);
    const ImageTensor a = add_gaussian_noise(img, 0.05, 99);
    const ImageTensor b = add_gaussian_noise(img, 0.05, 99);
    REQUIRE(a.data == b.data);
    REQUIRE(a.data != img.data);
    REQUIRE_THROWS_AS(add_gaussian_noise(img, -0.01, 1), ParamError);
}

TEST_CASE("add_gaussian_noise: sample std matches sigma within 5%") {
    const ImageTensor img(512, 512, 0.5f);
    const double sigma = 0.05;
    const ImageTensor noisy = add_gaussian_noise(img, sigma, 4242);
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = noisy.data[i] - img.data[i];
        sum += d;
        sq += d * d;
    }
    const double n = static_cast<double>(img.data.size());
    const double stddev = std::sqrt(sq / n - (sum / n) * (sum / n));
    REQUIRE(stddev == Catch::Approx(sigma).epsilon(0.05));
}

TEST_CASE("apply_recipe: degenerate noise-only recipe lists one exact entry") {
    DegradationRecipe recipe;
    recipe.motion_blur.probability = 0;
    recipe.gaussian_blur.probability = 0;
    recipe.exposure.probability = 0;
    recipe.noise.probability = 1;
    recipe.noise.sigma_lo = recipe.noise.sigma_hi = 0.1;

    const ImageTensor img = testutil::scene_image(24, 24, 31);
    auto [degraded, record] = apply_recipe(img, recipe, 777);
    REQUIRE(record.applied.size() == 1);
    REQUIRE(record.applied[0].kind == "noise");
    REQUIRE(record.applied[0].sigma == 0.1);
    REQUIRE(degraded.data != img.data);
}

TEST_CASE("apply_recipe: deterministic in (img, recipe, sub_seed)") {
    const DegradationRecipe recipe;
    const ImageTensor img = testutil::scene_image(32, 32, 33);
    auto [d1, r1] = apply_recipe(img, recipe, 123456);
    auto [d2, r2] = apply_recipe(img, recipe, 123456);
    REQUIRE(d1.data == d2.data);
    REQUIRE(record_to_json(r1) == record_to_json(r2));
}

TEST_CASE("apply_recipe: replaying the record is bit-exact") {
    const DegradationRecipe recipe;
    const ImageTensor img = testutil::scene_image(32, 32, 34);
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
        auto [degraded, record] = apply_recipe(img, recipe, seed);
        REQUIRE(replay_record(img, record).data == degraded.data);
        // And through a JSON roundtrip, as the manifest stores it.
        const DegradationRecord parsed = record_from_json(record_to_json(record));
        REQUIRE(replay_record(img, parsed).data == degraded.data);
    }
}

TEST_CASE("apply_recipe: at least one degradation is always applied") {
    DegradationRecipe recipe;
    recipe.motion_blur.probability = 0.01;
    recipe.gaussian_blur.probability = 0.01;
    recipe.exposure.probability = 0.01;
    recipe.noise.probability = 0.01;
    const ImageTensor img = testutil::scene_image(16, 16, 35);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto [degraded, record] = apply_recipe(img, recipe, seed);
        REQUIRE(!record.applied.empty());
    }
}

TEST_CASE("recipe validation rejects bad parameters") {
    DegradationRecipe r;
    r.noise.probability = 1.5;
    REQUIRE_THROWS_AS(r.validate(), ParamError);
    r = DegradationRecipe{};
    r.gaussian_blur.sigma_lo = 2.0;
    r.gaussian_blur.sigma_hi = 1.0;
    REQUIRE_THROWS_AS(r.validate(), ParamError);
    r = DegradationRecipe{};
    r.variants_per_image = 0;
    REQUIRE_THROWS_AS(r.validate(), ParamError);
    r = DegradationRecipe{};
    r.motion_blur.probability = r.gaussian_blur.probability = r.exposure.probability = r.noise.probability = 0;
    REQUIRE_THROWS_AS(r.validate(), ParamError);
}

namespace {

fs::path make_clean_dir(const testutil::TempDir& tmp, int count) {
    const fs::path dir = tmp.path() / "clean";
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i)
        save_image(testutil::scene_image(48, 48, 100 + static_cast<std::uint64_t>(i)),
                   dir / ("img" + std::to_string(i) + ".png"));
    return dir;
}

}  // namespace

TEST_CASE("build_dataset: counting and shared targets") {
    testutil::TempDir tmp("dataset");
    const fs::path clean = make_clean_dir(tmp, 5);
    DegradationRecipe recipe;
    recipe.variants_per_image = 3;
    const DatasetManifest manifest = build_dataset(clean, tmp.path() / "out", recipe);

    REQUIRE(manifest.pairs.size() == 15);
    std::set<std::string> targets;
    for (const auto& p : manifest.pairs) targets.insert(p.target);
    REQUIRE(targets.size() == 5);

    // All variants of one source reference the same target path.
    for (int v = 0; v < 3; ++v) REQUIRE(manifest.pairs[static_cast<std::size_t>(v)].target == manifest.pairs[0].target);

    for (const auto& p : manifest.pairs) {
        REQUIRE(fs::exists(tmp.path() / "out" / p.degraded));
        REQUIRE(fs::exists(tmp.path() / "out" / p.target));
    }
    REQUIRE(fs::exists(tmp.path() / "out" / "manifest.json"));
}

TEST_CASE("build_dataset: two runs are byte-identical") {
    testutil::TempDir tmp("determinism");
    const fs::path clean = make_clean_dir(tmp, 3);
    DegradationRecipe recipe;
    recipe.variants_per_image = 2;
    const DatasetManifest m1 = build_dataset(clean, tmp.path() / "out1", recipe);
    build_dataset(clean, tmp.path() / "out2", recipe);

    REQUIRE(testutil::slurp(tmp.path() / "out1" / "manifest.json") ==
            testutil::slurp(tmp.path() / "out2" / "manifest.json"));
    for (const auto& p : m1.pairs) {
        REQUIRE(testutil::slurp(tmp.path() / "out1" / p.degraded) == testutil::slurp(tmp.path() / "out2" / p.degraded));
        REQUIRE(testutil::slurp(tmp.path() / "out1" / p.target) == testutil::slurp(tmp.path() / "out2" / p.target));
    }
}

TEST_CASE("build_dataset: degraded images never equal their targets") {
    testutil::TempDir tmp("hurts");
    const fs::path clean = make_clean_dir(tmp, 4);
    DegradationRecipe recipe;
    recipe.variants_per_image = 2;
    const DatasetManifest manifest = build_dataset(clean, tmp.path() / "out", recipe);
    for (const auto& p : manifest.pairs) {
        const ImageTensor degraded = load_image(tmp.path() / "out" / p.degraded);
        const ImageTensor target = load_image(tmp.path() / "out" / p.target);
        REQUIRE(std::isfinite(psnr(degraded, target)));
    }
}

TEST_CASE("build_dataset: replay from the stored record matches saved bytes") {
    testutil::TempDir tmp("replay");
    const fs::path clean = make_clean_dir(tmp, 2);
    DegradationRecipe recipe;
    recipe.variants_per_image = 2;
    const DatasetManifest manifest = build_dataset(clean, tmp.path() / "out", recipe);
    for (const auto& p : manifest.pairs) {
        const ImageTensor source = load_image(tmp.path() / "out" / p.record.source_image);
        const ImageTensor replayed = replay_record(source, p.record);
        save_image(replayed, tmp.path() / "replayed.png");
        REQUIRE(testutil::slurp(tmp.path() / "replayed.png") == testutil::slurp(tmp.path() / "out" / p.degraded));
    }
}

TEST_CASE("build_dataset: empty directory raises EmptyDatasetError") {
    testutil::TempDir tmp("empty");
    fs::create_directories(tmp.path() / "clean");
    REQUIRE_THROWS_AS(build_dataset(tmp.path() / "clean", tmp.path() / "out", DegradationRecipe{}), EmptyDatasetError);
}

TEST_CASE("noise monotonicity: psnr nonincreasing in sigma") {
    const ImageTensor img = testutil::scene_image(64, 64, 50);
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {0.01, 0.05, 0.1}) {
        const double p = psnr(add_gaussian_noise(img, sigma, 7), img);
        REQUIRE(p <= prev);
        prev = p;
    }
}

TEST_CASE("manifest json roundtrip") {
    testutil::TempDir tmp("manifest");
    const fs::path clean = make_clean_dir(tmp, 2);
    const DatasetManifest manifest = build_dataset(clean, tmp.path() / "out", DegradationRecipe{});
    const DatasetManifest loaded = load_manifest(tmp.path() / "out" / "manifest.json");
    REQUIRE(manifest_to_json(loaded) == manifest_to_json(manifest));
}
