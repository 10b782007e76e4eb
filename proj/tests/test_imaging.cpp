#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "orbit/image.hpp"
#include "orbit/image_io.hpp"
#include "orbit/metrics.hpp"
#include "test_util.hpp"

using namespace orbit;
namespace fs = std::filesystem;

TEST_CASE("load_image: all-white png decodes to all 1.0") {
    testutil::TempDir tmp("white");
    ImageTensor white(2, 2, 1.0f);
    save_image(white, tmp.path() / "white.png");
    const ImageTensor loaded = load_image(tmp.path() / "white.png");
    REQUIRE(loaded.height == 2);
    REQUIRE(loaded.width == 2);
    for (float v : loaded.data) REQUIRE(v == 1.0f);
}

TEST_CASE("load_image: byte 128 maps to 128/255") {
    testutil::TempDir tmp("gray");
    ImageTensor gray(1, 1, 128.0f / 255.0f);
    save_image(gray, tmp.path() / "gray.png");
    const ImageTensor loaded = load_image(tmp.path() / "gray.png");
    REQUIRE(loaded.at(0, 0, 0) == 128.0f / 255.0f);
    REQUIRE(loaded.at(0, 0, 0) == Catch::Approx(0.501961).epsilon(1e-5));
}

TEST_CASE("load_image: missing file raises NotFound") {
    REQUIRE_THROWS_AS(load_image("does/not/exist.png"), NotFoundError);
}

TEST_CASE("load_image: undecodable bytes raise DecodeError") {
    testutil::TempDir tmp("garbage");
    std::ofstream(tmp.path() / "bad.png") << "this is not a png";
    REQUIRE_THROWS_AS(load_image(tmp.path() / "bad.png"), DecodeError);
}

TEST_CASE("save/load roundtrip is within one quantization step") {
    testutil::TempDir tmp("roundtrip");
    const ImageTensor img = testutil::random_image(4, 4, 7);
    save_image(img, tmp.path() / "img.png");
    const ImageTensor loaded = load_image(tmp.path() / "img.png");
    for (std::size_t i = 0; i < img.data.size(); ++i)
        REQUIRE(std::abs(img.data[i] - loaded.data[i]) <= 1.0f / 255.0f);
}

TEST_CASE("save/load: endpoint values roundtrip exactly") {
    testutil::TempDir tmp("endpoints");
    ImageTensor img(2, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = i % 2 ? 1.0f : 0.0f;
    save_image(img, tmp.path() / "img.png");
    const ImageTensor loaded = load_image(tmp.path() / "img.png");
    REQUIRE(loaded.data == img.data);
}

TEST_CASE("save_image to unwritable path raises IoError") {
    REQUIRE_THROWS_AS(save_image(ImageTensor(2, 2), "/proc/definitely/not/writable.png"), IoError);
}

TEST_CASE("8-bit roundtrip bound holds for 1000 random images") {
    testutil::TempDir tmp("bulk");
    for (int i = 0; i < 1000; ++i) {
        const ImageTensor img = testutil::random_image(6, 5, 1000 + static_cast<std::uint64_t>(i));
        const auto bytes = image_to_bytes(img);
        const ImageTensor back = image_from_bytes(bytes.data(), img.height, img.width, 3);
        for (std::size_t k = 0; k < img.data.size(); ++k)
            REQUIRE(std::abs(img.data[k] - back.data[k]) <= 1.0f / 255.0f);
    }
}

TEST_CASE("grayscale png loads channel-replicated") {
    // Hand-written 8-bit grayscale PNG via libpng would need a separate
    // writer; synthesize with the low-level row API instead.
    testutil::TempDir tmp("gray8");
    const fs::path path = tmp.path() / "gray8.png";
    {
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        REQUIRE(f != nullptr);
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png_create_info_struct(png);
        REQUIRE(setjmp(png_jmpbuf(png)) == 0);
        png_init_io(png, f);
        png_set_IHDR(png, info, 2, 1, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        unsigned char row[2] = {0, 200};
        png_bytep rows[1] = {row};
        png_write_image(png, rows);
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
        std::fclose(f);
    }
    const ImageTensor img = load_image(path);
    REQUIRE(img.at(0, 1, 0) == Catch::Approx(200.0 / 255.0));
    REQUIRE(img.at(0, 1, 0) == img.at(0, 1, 1));
    REQUIRE(img.at(0, 1, 0) == img.at(0, 1, 2));
}

TEST_CASE("psnr: identical images give the infinity sentinel") {
    const ImageTensor img = testutil::random_image(8, 8, 3);
    REQUIRE(std::isinf(psnr(img, img)));
}

TEST_CASE("psnr: all-zero vs all-one is 0 dB") {
    REQUIRE(psnr(ImageTensor(4, 4, 0.0f), ImageTensor(4, 4, 1.0f)) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("psnr: all-zero vs all-half is 10*log10(4)") {
    REQUIRE(psnr(ImageTensor(4, 4, 0.0f), ImageTensor(4, 4, 0.5f)) ==
            Catch::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
}

TEST_CASE("psnr: shape mismatch raises ShapeError") {
    REQUIRE_THROWS_AS(psnr(ImageTensor(4, 4), ImageTensor(4, 5)), ShapeError);
}

TEST_CASE("psnr is monotone in constant perturbation magnitude") {
    const ImageTensor base(16, 16, 0.25f);
    double prev = std::numeric_limits<double>::infinity();
    for (float delta : {0.05f, 0.1f, 0.2f, 0.4f}) {
        ImageTensor moved(16, 16, 0.25f + delta);
        const double p = psnr(base, moved);
        REQUIRE(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim: identical images score exactly 1") {
    const ImageTensor img = testutil::random_image(16, 16, 9);
    REQUIRE(ssim(img, img) == 1.0);
}

TEST_CASE("ssim: constant 0 vs constant 1 equals C1/(1+C1)") {
    const double expected = 1e-4 / (1.0 + 1e-4);
    const double got = ssim(ImageTensor(16, 16, 0.0f), ImageTensor(16, 16, 1.0f));
    REQUIRE(got == Catch::Approx(expected).epsilon(1e-4));
}

TEST_CASE("ssim is symmetric") {
    const ImageTensor a = testutil::random_image(20, 14, 11);
    const ImageTensor b = testutil::random_image(20, 14, 12);
    REQUIRE(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
}

TEST_CASE("ssim errors: shape mismatch and sub-window images") {
    REQUIRE_THROWS_AS(ssim(ImageTensor(16, 16), ImageTensor(16, 15)), ShapeError);
    REQUIRE_THROWS_AS(ssim(ImageTensor(10, 16), ImageTensor(10, 16)), SizeError);
}

TEST_CASE("resize_bilinear keeps values in range and hits requested size") {
    const ImageTensor img = testutil::random_image(13, 21, 5);
    const ImageTensor out = resize_bilinear(img, 32, 16);
    REQUIRE(out.height == 32);
    REQUIRE(out.width == 16);
    for (float v : out.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("letterbox preserves aspect and fills background with zeros") {
    ImageTensor wide(10, 40, 0.5f);
    const ImageTensor cell = letterbox(wide, 32, 32);
    REQUIRE(cell.height == 32);
    REQUIRE(cell.width == 32);
    // 40 -> 32 wide means 8 rows of content centered vertically.
    REQUIRE(cell.at(0, 16, 0) == 0.0f);
    REQUIRE(cell.at(16, 16, 0) == Catch::Approx(0.5).margin(1e-6));
}
