#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <png.h>
#include <vector>

#include "fgs/dataset.hpp"

namespace fgs {

namespace {

struct MemReader {
    const std::uint8_t* data;
    std::size_t len;
    std::size_t pos;
};

void mem_read(png_structp png, png_bytep out, png_size_t count) {
    auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
    if (r->pos + count > r->len) {
        png_error(png, "read past end of buffer");
        return;
    }
    std::memcpy(out, r->data + r->pos, count);
    r->pos += count;
}

ImageTile decode(png_structp png, png_infop info, const std::string& what) {
    if (setjmp(png_jmpbuf(png))) throw IoError("corrupt or truncated PNG: " + what);

    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_strip_alpha(png);
    // Grayscale replicated to 3 channels.
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    ImageTile t;
    t.h = static_cast<int>(h);
    t.w = static_cast<int>(w);
    t.c = 3;
    t.pixels.resize(static_cast<std::size_t>(h) * w * 3);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w * 3; ++x)
            t.pixels[static_cast<std::size_t>(y) * w * 3 + x] = row[x] / 255.0f;
    }
    png_read_end(png, nullptr);
    return t;
}

}  // namespace

ImageTile load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open PNG: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    ImageTile t;
    try {
        png_init_io(png, fp);
        t = decode(png, info, path);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    t.source_id = path;
    return t;
}

ImageTile decode_png(const std::uint8_t* data, std::size_t len) {
    if (len < 8 || png_sig_cmp(data, 0, 8) != 0) throw IoError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    MemReader reader{data, len, 0};
    ImageTile t;
    try {
        png_set_read_fn(png, &reader, mem_read);
        t = decode(png, info, "<memory>");
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return t;
}

void save_png(const ImageTile& img, const std::string& path) {
    if (img.c != 1 && img.c != 3) throw ContractError("save_png expects 1 or 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write PNG: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("PNG encode failed: " + path);
    }
    png_init_io(png, fp);
    int color = img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w * img.c; ++x) {
            float v = img.pixels[static_cast<std::size_t>(y) * img.w * img.c + x];
            row[static_cast<std::size_t>(x)] =
                static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace fgs
