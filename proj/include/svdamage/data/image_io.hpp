#pragma once

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "svdamage/data/image.hpp"

namespace svdamage {

inline PixelImage from_rgb8(const unsigned char* rgb, std::size_t h, std::size_t w) {
    PixelImage img(h, w, 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[(y * w + x) * 3 + c] / 255.0f;
    return img;
}

inline std::vector<unsigned char> to_rgb8(const PixelImage& img) {
    check_rgb(img, "to_rgb8");
    std::vector<unsigned char> out(img.height * img.width * 3);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out[(y * img.width + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
    return out;
}

inline PixelImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw ValidationError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw ValidationError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return from_rgb8(buf.data(), image.height, image.width);
}

namespace detail {

inline void write_png_raw(const std::filesystem::path& path, const unsigned char* data, std::size_t h, std::size_t w,
                          png_uint_32 format) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr))
        throw RuntimeFailure("cannot write PNG " + path.string() + ": " + image.message);
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Decodes into `out` (pre-sized by the caller through the callback-free API).
// Returns false with err.message set on failure.
inline bool decode_jpeg(const std::vector<unsigned char>& bytes, std::vector<unsigned char>& out, std::size_t& h,
                        std::size_t& w, JpegError& err) {
    jpeg_decompress_struct cinfo{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    h = cinfo.output_height;
    w = cinfo.output_width;
    out.resize(h * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

} // namespace detail

inline void write_png(const std::filesystem::path& path, const PixelImage& img) {
    auto rgb = to_rgb8(img);
    detail::write_png_raw(path, rgb.data(), img.height, img.width, PNG_FORMAT_RGB);
}

// Single-channel 0/1 mask written as an 8-bit grey PNG (0 or 255).
inline void write_mask_png(const std::filesystem::path& path, const std::vector<unsigned char>& mask, std::size_t h,
                           std::size_t w) {
    require(mask.size() == h * w, "mask size mismatch");
    std::vector<unsigned char> grey(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) grey[i] = mask[i] ? 255 : 0;
    detail::write_png_raw(path, grey.data(), h, w, PNG_FORMAT_GRAY);
}

inline std::vector<unsigned char> read_mask_png(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw ValidationError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_GRAY;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw ValidationError("cannot decode PNG " + path.string());
    }
    h = image.height;
    w = image.width;
    for (auto& v : buf) v = v >= 128;
    return buf;
}

inline PixelImage read_jpeg(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read JPEG " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<unsigned char> rgb;
    std::size_t h = 0, w = 0;
    detail::JpegError err{};
    if (!detail::decode_jpeg(bytes, rgb, h, w, err))
        throw ValidationError("cannot decode JPEG " + path.string() + ": " + err.message);
    return from_rgb8(rgb.data(), h, w);
}

// Dispatches on the file signature, not the extension.
inline PixelImage read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open image " + path.string());
    unsigned char sig[4] = {};
    in.read(reinterpret_cast<char*>(sig), 4);
    if (sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') return read_png(path);
    if (sig[0] == 0xFF && sig[1] == 0xD8) return read_jpeg(path);
    throw ValidationError("unsupported image format: " + path.string());
}

} // namespace svdamage
