#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "orbit/common.hpp"
#include "orbit/image.hpp"

namespace orbit {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReadGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadGuard() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriteGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteGuard() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

inline ImageTensor load_png(std::FILE* f, const std::string& path) {
    PngReadGuard g;
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw DecodeError("png: allocation failure");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw DecodeError("png: allocation failure");
    if (setjmp(png_jmpbuf(g.png))) throw DecodeError("png: failed to decode " + path);

    png_init_io(g.png, f);
    png_read_info(g.png, g.info);

    // Normalize everything to 8-bit RGB: expand palettes and sub-byte gray,
    // replicate gray to three channels, drop alpha, fold 16-bit to 8.
    png_set_palette_to_rgb(g.png);
    png_set_expand_gray_1_2_4_to_8(g.png);
    if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
    png_set_strip_16(g.png);
    png_set_strip_alpha(g.png);
    png_set_gray_to_rgb(g.png);
    png_read_update_info(g.png, g.info);

    const int w = static_cast<int>(png_get_image_width(g.png, g.info));
    const int h = static_cast<int>(png_get_image_height(g.png, g.info));
    if (png_get_channels(g.png, g.info) != 3 || png_get_bit_depth(g.png, g.info) != 8) {
        throw DecodeError("png: unsupported pixel layout in " + path);
    }

    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(g.png, rows.data());
    png_read_end(g.png, nullptr);
    return image_from_bytes(pixels.data(), h, w, 3);
}

struct JpegErrorMgr {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

inline ImageTensor load_jpeg(std::FILE* f, const std::string& path) {
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DecodeError("jpeg: failed to decode " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return image_from_bytes(pixels.data(), h, w, 3);
}

}  // namespace detail

// Decodes an 8-bit PNG or JPEG (sniffed by magic bytes, not extension).
// Grayscale is replicated to three channels; values follow byte/255 exactly.
inline ImageTensor load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFoundError("no such file: " + path.string());
    detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());

    unsigned char magic[8] = {};
    const std::size_t got = std::fread(magic, 1, sizeof(magic), f.get());
    std::rewind(f.get());
    if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return detail::load_png(f.get(), path.string());
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return detail::load_jpeg(f.get(), path.string());
    throw DecodeError("not a PNG or JPEG file: " + path.string());
}

// Writes an 8-bit RGB PNG with round(clamp(v,0,1)*255) quantization. PNG is
// the canonical lossless interchange format; JPEG is accepted on input only.
inline void save_image(const ImageTensor& img, const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext != ".png") throw ParamError("only .png output is supported, got: " + path.string());

    detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw IoError("cannot write " + path.string());

    detail::PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw IoError("png: allocation failure");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw IoError("png: allocation failure");
    if (setjmp(png_jmpbuf(g.png))) throw IoError("png: failed to write " + path.string());

    png_init_io(g.png, f.get());
    png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Pinned compression settings keep output bytes reproducible.
    png_set_compression_level(g.png, 6);
    png_set_filter(g.png, 0, PNG_FILTER_SUB);
    png_write_info(g.png, g.info);

    std::vector<std::uint8_t> pixels = image_to_bytes(img);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
    png_write_image(g.png, rows.data());
    png_write_end(g.png, nullptr);
}

}  // namespace orbit
