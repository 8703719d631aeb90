#ifndef CXR_IMAGE_IO_HPP
#define CXR_IMAGE_IO_HPP

// PNG reading/writing (libpng) plus the preprocessing that turns a raw
// 8-bit image into a normalized float tensor: optional RGB -> grayscale by
// the Rec.601 luma combination, bilinear resize, division by 255.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "cxr/tensor.hpp"

namespace cxr {

class image_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit image as decoded from disk; 1 (gray) or 3 (RGB) interleaved channels.
struct raw_image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // row-major, channels interleaved

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
};

namespace detail {

struct file_closer {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using file_ptr = std::unique_ptr<std::FILE, file_closer>;

}  // namespace detail

inline raw_image read_png(const std::filesystem::path& path) {
    detail::file_ptr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw image_error("cannot open image: " + path.string());

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw image_error("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw image_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw image_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw image_error("failed to decode PNG: " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize everything to 8-bit gray or RGB.
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    raw_image img;
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    if (img.width == 0 || img.height == 0) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw image_error("zero-dimension PNG: " + path.string());
    }
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw image_error("unsupported channel count in " + path.string());
    }

    img.pixels.resize(img.width * img.height * img.channels);
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png_gray(const std::filesystem::path& path, const std::uint8_t* data,
                           std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw image_error("write_png_gray: empty image");
    detail::file_ptr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw image_error("cannot write image: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw image_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw image_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw image_error("failed to encode PNG: " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(data + y * width);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Rec.601 luma: Y = 0.299 R + 0.587 G + 0.114 B, rounded to nearest.
inline raw_image to_grayscale(const raw_image& img) {
    if (img.channels == 1) return img;
    raw_image out;
    out.channels = 1;
    out.height = img.height;
    out.width = img.width;
    out.pixels.resize(img.height * img.width);
    for (std::size_t i = 0; i < img.height * img.width; ++i) {
        const double r = img.pixels[3 * i + 0];
        const double g = img.pixels[3 * i + 1];
        const double b = img.pixels[3 * i + 2];
        const double y = 0.299 * r + 0.587 * g + 0.114 * b;
        out.pixels[i] = static_cast<std::uint8_t>(y + 0.5);
    }
    return out;
}

// Bilinear resample of a single-channel plane, half-pixel center convention,
// edge samples clamped. lerp(a,b,0) == a exactly, so an axis with unit scale
// copies values through unchanged.
template <typename T>
image<T> resize_bilinear(const image<T>& src, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0)
        throw image_error("resize_bilinear: target size must be positive");
    if (src.height == out_h && src.width == out_w) return src;

    image<T> dst(src.channels, out_h, out_w);
    const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
    for (std::size_t c = 0; c < src.channels; ++c) {
        const T* in = src.channel(c);
        T* out = dst.channel(c);
        for (std::size_t y = 0; y < out_h; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            if (fy < 0) fy = 0;
            std::size_t y0 = static_cast<std::size_t>(fy);
            if (y0 > src.height - 1) y0 = src.height - 1;
            const std::size_t y1 = (y0 + 1 < src.height) ? y0 + 1 : y0;
            const T wy = static_cast<T>(fy - static_cast<double>(y0));
            for (std::size_t x = 0; x < out_w; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                if (fx < 0) fx = 0;
                std::size_t x0 = static_cast<std::size_t>(fx);
                if (x0 > src.width - 1) x0 = src.width - 1;
                const std::size_t x1 = (x0 + 1 < src.width) ? x0 + 1 : x0;
                const T wx = static_cast<T>(fx - static_cast<double>(x0));
                const T top = in[y0 * src.width + x0] +
                              wx * (in[y0 * src.width + x1] - in[y0 * src.width + x0]);
                const T bot = in[y1 * src.width + x0] +
                              wx * (in[y1 * src.width + x1] - in[y1 * src.width + x0]);
                out[y * out_w + x] = top + wy * (bot - top);
            }
        }
    }
    return dst;
}

// 8-bit grayscale -> resized single-channel tensor with values in [0, 1].
template <typename T = float>
image<T> normalize_image(const raw_image& raw, std::size_t target_h, std::size_t target_w) {
    if (raw.width == 0 || raw.height == 0)
        throw image_error("normalize_image: input has a zero dimension");
    if (target_h == 0 || target_w == 0)
        throw image_error("normalize_image: target size must be positive");
    if (raw.channels != 1)
        throw image_error("normalize_image: expected a grayscale image");

    image<T> full(1, raw.height, raw.width);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        full.data[i] = static_cast<T>(raw.pixels[i]);
    image<T> resized = resize_bilinear(full, target_h, target_w);
    for (auto& v : resized.data) v = v / static_cast<T>(255);
    return resized;
}

template <typename T>
image<T> replicate_channels(const image<T>& img, std::size_t channels) {
    if (img.channels == channels) return img;
    if (img.channels != 1)
        throw image_error("replicate_channels: source must be single-channel");
    image<T> out(channels, img.height, img.width);
    for (std::size_t c = 0; c < channels; ++c)
        std::copy(img.data.begin(), img.data.end(), out.channel(c));
    return out;
}

// Decode, grayscale, resize, normalize; optionally replicate to n channels.
template <typename T = float>
image<T> load_image(const std::filesystem::path& path, std::size_t target_h, std::size_t target_w,
                    std::size_t channels = 1) {
    const raw_image gray = to_grayscale(read_png(path));
    image<T> img = normalize_image<T>(gray, target_h, target_w);
    return replicate_channels(img, channels);
}

}  // namespace cxr

#endif
