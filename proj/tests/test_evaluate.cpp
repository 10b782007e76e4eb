#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "orbit/degrade.hpp"
#include "orbit/evaluate.hpp"
#include "test_util.hpp"

using namespace orbit;
namespace fs = std::filesystem;

namespace {

fs::path make_dataset(const testutil::TempDir& tmp, int sources = 4) {
    const fs::path clean = tmp.path() / "clean";
    fs::create_directories(clean);
    for (int i = 0; i < sources; ++i)
        save_image(testutil::scene_image(48, 48, 900 + static_cast<std::uint64_t>(i)),
                   clean / ("img" + std::to_string(i) + ".png"));
    DegradationRecipe recipe;
    recipe.variants_per_image = 2;
    build_dataset(clean, tmp.path() / "data", recipe);
    return tmp.path() / "data" / "manifest.json";
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::istringstream in(testutil::slurp(p));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("evaluate with the identity enhancer reproduces input metrics") {
    testutil::TempDir tmp("ident");
    const fs::path manifest = make_dataset(tmp);
    const MetricsReport report =
        evaluate([](const ImageTensor& img) { return img; }, manifest, tmp.path() / "report");
    REQUIRE(report.per_pair.size() == 8);
    for (const auto& m : report.per_pair) {
        REQUIRE(m.psnr_out == m.psnr_in);
        REQUIRE(m.ssim_out == m.ssim_in);
    }
    REQUIRE(report.psnr_out.mean == report.psnr_in.mean);
}

TEST_CASE("evaluate with a returns-target enhancer excludes infinite psnr from means") {
    testutil::TempDir tmp("target");
    const fs::path manifest_path = make_dataset(tmp);
    const DatasetManifest manifest = load_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();

    // Cheat enhancer: look up the target by matching the degraded image.
    auto oracle = [&](const ImageTensor& degraded) -> ImageTensor {
        for (const auto& p : manifest.pairs) {
            const ImageTensor d = load_image(root / p.degraded);
            if (d.data == degraded.data) return load_image(root / p.target);
        }
        throw Error("unknown degraded image");
    };

    const MetricsReport report = evaluate(oracle, manifest_path, tmp.path() / "report");
    for (const auto& m : report.per_pair) {
        REQUIRE(std::isinf(m.psnr_out));
        REQUIRE(m.ssim_out == 1.0);
    }
    REQUIRE(report.psnr_out.excluded_infinite == static_cast<std::int64_t>(report.per_pair.size()));
    REQUIRE(std::isnan(report.psnr_out.mean));
    REQUIRE(report.psnr_in.excluded_infinite == 0);
}

TEST_CASE("evaluate: empty manifest raises EmptyDatasetError") {
    testutil::TempDir tmp("empty");
    write_json_file(tmp.path() / "manifest.json",
                    Json{{"version", 1}, {"recipe", recipe_to_json(DegradationRecipe{})}, {"pairs", Json::array()}});
    REQUIRE_THROWS_AS(evaluate([](const ImageTensor& i) { return i; }, tmp.path() / "manifest.json", tmp.path()),
                      EmptyDatasetError);
}

TEST_CASE("report files are cross-consistent and aggregates recompute") {
    testutil::TempDir tmp("report");
    const fs::path manifest = make_dataset(tmp);
    const MetricsReport report =
        evaluate([](const ImageTensor& img) { return gaussian_blur(img, 1.0); }, manifest, tmp.path() / "report");

    const Json j = load_json_file(tmp.path() / "report" / "report.json");
    const auto lines = read_lines(tmp.path() / "report" / "report.csv");
    REQUIRE(lines[0] == "pair,psnr_in,ssim_in,psnr_out,ssim_out");
    REQUIRE(lines.size() == report.per_pair.size() + 1);

    double sum_psnr_out = 0;
    for (std::size_t i = 0; i < report.per_pair.size(); ++i) {
        const auto& row = j.at("per_pair").at(i);
        const auto& m = report.per_pair[i];
        REQUIRE(row.at("pair").get<std::string>() == m.pair);
        REQUIRE(row.at("psnr_in").get<double>() == m.psnr_in);
        REQUIRE(row.at("ssim_out").get<double>() == m.ssim_out);

        // CSV row round-trips the same values at %.17g precision.
        std::istringstream csv_row(lines[i + 1]);
        std::string field;
        std::getline(csv_row, field, ',');
        REQUIRE(field == m.pair);
        std::getline(csv_row, field, ',');
        REQUIRE(std::stod(field) == m.psnr_in);
        std::getline(csv_row, field, ',');
        REQUIRE(std::stod(field) == m.ssim_in);
        std::getline(csv_row, field, ',');
        REQUIRE(std::stod(field) == m.psnr_out);
        std::getline(csv_row, field, ',');
        REQUIRE(std::stod(field) == m.ssim_out);

        sum_psnr_out += m.psnr_out;
    }
    const double mean = sum_psnr_out / static_cast<double>(report.per_pair.size());
    REQUIRE(std::abs(mean - report.psnr_out.mean) <= 1e-9);
    REQUIRE(j.at("aggregates").at("psnr_out").at("mean").get<double>() == report.psnr_out.mean);
}

TEST_CASE("make_grid: 3x4 tiling of 128px cells is 384x512") {
    std::vector<std::vector<ImageTensor>> rows(3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) rows[static_cast<std::size_t>(r)].push_back(testutil::scene_image(40, 40, 7));
    const ImageTensor grid = make_grid(rows, 128, 128);
    REQUIRE(grid.height == 384);
    REQUIRE(grid.width == 512);
}

TEST_CASE("make_grid: single cell is a letterboxed copy") {
    const ImageTensor img = testutil::scene_image(30, 60, 8);
    const ImageTensor grid = make_grid({{img}}, 64, 64);
    const ImageTensor expected = letterbox(img, 64, 64);
    REQUIRE(grid.data == expected.data);
}

TEST_CASE("make_grid: grids compose associatively in dimensions") {
    const ImageTensor cell = testutil::scene_image(20, 20, 9);
    const ImageTensor inner = make_grid({{cell, cell}}, 32, 32);  // 32x64
    const ImageTensor outer = make_grid({{inner}, {inner}}, 64, 128);
    REQUIRE(outer.height == 2 * 64);
    REQUIRE(outer.width == 128);
}

TEST_CASE("make_grid: ragged rows raise ShapeError") {
    const ImageTensor cell = testutil::scene_image(16, 16, 10);
    std::vector<std::vector<ImageTensor>> rows = {{cell, cell}, {cell}};
    REQUIRE_THROWS_AS(make_grid(rows, 32, 32), ShapeError);
}

TEST_CASE("grid pixels are resampled sources or the zero background") {
    // A bright constant image letterboxed into a wide cell: pixels are
    // either the constant or exactly 0.
    ImageTensor bright(10, 10, 1.0f);
    const ImageTensor grid = make_grid({{bright}}, 32, 64);
    for (float v : grid.data) REQUIRE((v == 0.0f || v == 1.0f));
}
