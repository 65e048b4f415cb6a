#include "dehaze/raster_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace dehaze {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "float32 raster IO assumes a little-endian host");

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void io_fail(const fs::path& path, const std::string& what) {
    throw IoError(path.string() + ": " + what);
}

std::vector<std::uint8_t> read_png_bytes(const fs::path& path, int& height, int& width) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) io_fail(path, "cannot open for reading");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) io_fail(path, "not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        io_fail(path, "libpng initialisation failed");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        io_fail(path, "corrupt PNG data");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info), type = png_get_color_type(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (type == PNG_COLOR_TYPE_RGB || type == PNG_COLOR_TYPE_RGB_ALPHA || type == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 1) {
        png_destroy_read_struct(&png, &info, nullptr);
        io_fail(path, "could not reduce PNG to one channel");
    }
    pixels.resize(static_cast<std::size_t>(w) * h);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * w;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    height = static_cast<int>(h);
    width = static_cast<int>(w);
    return pixels;
}

void write_png_bytes(const fs::path& path, const std::vector<std::uint8_t>& pixels, int height, int width) {
    const fs::path tmp = path.string() + ".tmp";
    {
        FilePtr f(std::fopen(tmp.c_str(), "wb"));
        if (!f) io_fail(tmp, "cannot open for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            io_fail(path, "libpng initialisation failed");
        }
        std::vector<png_bytep> rows(static_cast<std::size_t>(height));
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            io_fail(path, "PNG encoding failed");
        }
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int r = 0; r < height; ++r)
            rows[static_cast<std::size_t>(r)] =
                const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(width));
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    fs::rename(tmp, path);
}

} // namespace

std::uint8_t quantize_u8(float v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

Raster read_png(const fs::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_png_bytes(path, h, w);
    Raster out(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i] / 255.0);
    return out;
}

void write_png(const fs::path& path, const Raster& image) {
    std::vector<std::uint8_t> bytes(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) bytes[i] = quantize_u8(image[i]);
    write_png_bytes(path, bytes, image.height(), image.width());
}

void write_mask_png(const fs::path& path, const Mask& ventricle, const Mask& septum) {
    require_same_shape(ventricle, septum, "write_mask_png");
    std::vector<std::uint8_t> bytes(ventricle.size(), 0);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (ventricle[i] && septum[i]) throw ContractError("write_mask_png: ventricle and septum overlap");
        bytes[i] = ventricle[i] ? kVentricleLabel : (septum[i] ? kSeptumLabel : 0);
    }
    write_png_bytes(path, bytes, ventricle.height(), ventricle.width());
}

RoiMasks read_mask_png(const fs::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_png_bytes(path, h, w);
    RoiMasks m{Mask(h, w), Mask(h, w)};
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] == kVentricleLabel)
            m.ventricle[i] = 1;
        else if (bytes[i] == kSeptumLabel)
            m.septum[i] = 1;
        else if (bytes[i] != 0)
            io_fail(path, "unexpected mask label " + std::to_string(bytes[i]));
    }
    return m;
}

void write_binary_png(const fs::path& path, const Mask& mask) {
    std::vector<std::uint8_t> bytes(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
    write_png_bytes(path, bytes, mask.height(), mask.width());
}

Raster read_f32(const fs::path& path) {
    const std::string bytes = read_file(path);
    constexpr std::size_t header = 16;
    if (bytes.size() < header || std::memcmp(bytes.data(), kF32Magic, 8) != 0)
        io_fail(path, "not a float32 raster (bad magic)");
    std::uint32_t h = 0, w = 0;
    std::memcpy(&h, bytes.data() + 8, 4);
    std::memcpy(&w, bytes.data() + 12, 4);
    const std::size_t expected = header + static_cast<std::size_t>(h) * w * sizeof(float);
    if (bytes.size() != expected)
        io_fail(path, "header declares " + std::to_string(h) + "x" + std::to_string(w) + " but payload is " +
                          std::to_string(bytes.size() - header) + " bytes");
    Raster out(static_cast<int>(h), static_cast<int>(w));
    std::memcpy(out.storage().data(), bytes.data() + header, out.size() * sizeof(float));
    return out;
}

void write_f32(const fs::path& path, const Raster& image) {
    std::string bytes(16 + image.size() * sizeof(float), '\0');
    const auto h = static_cast<std::uint32_t>(image.height()), w = static_cast<std::uint32_t>(image.width());
    std::memcpy(bytes.data(), kF32Magic, 8);
    std::memcpy(bytes.data() + 8, &h, 4);
    std::memcpy(bytes.data() + 12, &w, 4);
    std::memcpy(bytes.data() + 16, image.storage().data(), image.size() * sizeof(float));
    write_file_atomic(path, bytes);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) io_fail(tmp, "cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) io_fail(tmp, "write failed");
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& extension) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace dehaze
