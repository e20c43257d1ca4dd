#include "flowmatch/flow_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include <png.h>

#include "binary_io.hpp"

namespace flowmatch {

std::vector<std::uint8_t> encode_flo(const FlowField& field) {
    io::ByteWriter w;
    w.f32(kFloMagic);
    w.i32(static_cast<std::int32_t>(field.width()));
    w.i32(static_cast<std::int32_t>(field.height()));
    for (std::size_t p = 0; p < field.pixels(); ++p) {
        float u = field.data[2 * p], v = field.data[2 * p + 1];
        if (!field.is_valid(p) && std::abs(u) <= kFloUnknownThreshold && std::abs(v) <= kFloUnknownThreshold) {
            u = v = 1e10f;
        }
        w.f32(u);
        w.f32(v);
    }
    return std::move(w).take();
}

FlowField decode_flo(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    const float magic = r.f32(".flo magic");
    if (magic != kFloMagic) throw FormatError(".flo magic is not 202021.25", 0);
    const std::int32_t w = r.i32(".flo width");
    const std::int32_t h = r.i32(".flo height");
    if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
        throw FormatError("implausible .flo extent " + std::to_string(w) + "x" + std::to_string(h), 4);
    }
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (r.remaining() < n * 8) {
        throw FormatError("truncated .flo payload: need " + std::to_string(n * 8) + " bytes, have " +
                              std::to_string(r.remaining()),
                          r.offset());
    }
    Tensor data({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 2});
    io::get_f32_array(r, data.values(), ".flo payload");
    if (r.remaining() != 0) throw FormatError("trailing bytes after .flo payload", r.offset());

    std::vector<std::uint8_t> mask(n, 1);
    bool any_invalid = false;
    for (std::size_t p = 0; p < n; ++p) {
        const float u = data[2 * p], v = data[2 * p + 1];
        if (!(std::abs(u) <= kFloUnknownThreshold) || !(std::abs(v) <= kFloUnknownThreshold)) {
            mask[p] = 0;
            any_invalid = true;
        }
    }
    FlowField field(std::move(data));
    if (any_invalid) field.valid = std::move(mask);
    return field;
}

FlowField read_flo(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return decode_flo(bytes);
    } catch (const FormatError& e) {
        throw e.prefixed(path.string() + ": ");
    }
}

void write_flo(const FlowField& field, const std::filesystem::path& path) {
    io::write_file(path, encode_flo(field));
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Writes 8- or 16-bit RGB rows. `rows` holds big-endian sample bytes already.
void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int bit_depth,
               const std::vector<std::uint8_t>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw FormatError("cannot open " + path.string() + " for writing");
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialisation failed");
    }
    const std::size_t stride = width * 3 * static_cast<std::size_t>(bit_depth / 8);
    std::vector<png_const_bytep> row_ptrs(height);
    for (std::size_t y = 0; y < height; ++y) row_ptrs[y] = rows.data() + y * stride;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("PNG write failed: " + message);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_rows(png, const_cast<png_bytepp>(row_ptrs.data()), static_cast<png_uint_32>(height));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

FlowField read_kitti_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError(path.string() + ": not a PNG file", 0);
    }
    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialisation failed");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> row_ptrs;
    png_uint_32 width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path.string() + ": PNG decode failed: " + message);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path.string() + ": KITTI flow PNG must be 16-bit RGB (got depth " +
                          std::to_string(bit_depth) + ", color type " + std::to_string(color_type) + ")");
    }
    const std::size_t stride = static_cast<std::size_t>(width) * 6;
    pixels.resize(stride * height);
    row_ptrs.resize(height);
    for (std::size_t y = 0; y < height; ++y) row_ptrs[y] = pixels.data() + y * stride;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor data({height, width, 2});
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height);
    for (std::size_t p = 0; p < mask.size(); ++p) {
        const std::uint8_t* px = pixels.data() + p * 6;
        const auto ch = [&](int i) { return static_cast<unsigned>(px[2 * i] << 8 | px[2 * i + 1]); };
        data[2 * p] = static_cast<float>((static_cast<double>(ch(0)) - 32768.0) / 64.0);
        data[2 * p + 1] = static_cast<float>((static_cast<double>(ch(1)) - 32768.0) / 64.0);
        mask[p] = ch(2) > 0 ? 1 : 0;
    }
    return FlowField(std::move(data), std::move(mask));
}

void write_kitti_png(const FlowField& field, const std::filesystem::path& path) {
    const std::size_t w = field.width(), h = field.height();
    std::vector<std::uint8_t> rows(w * h * 6);
    auto encode = [](float f) {
        const double q = std::round(static_cast<double>(f) * 64.0 + 32768.0);
        return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
    };
    for (std::size_t p = 0; p < w * h; ++p) {
        const bool ok = field.is_valid(p);
        const std::uint16_t ch[3] = {ok ? encode(field.data[2 * p]) : std::uint16_t{0},
                                     ok ? encode(field.data[2 * p + 1]) : std::uint16_t{0},
                                     static_cast<std::uint16_t>(ok ? 1 : 0)};
        for (int i = 0; i < 3; ++i) {
            rows[p * 6 + 2 * i] = static_cast<std::uint8_t>(ch[i] >> 8);
            rows[p * 6 + 2 * i + 1] = static_cast<std::uint8_t>(ch[i] & 0xff);
        }
    }
    write_png(path, w, h, 16, rows);
}

FlowField read_flow(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".png" || ext == ".PNG") return read_kitti_png(path);
    return read_flo(path);
}

void write_png_rgb8(const RgbImage& image, const std::filesystem::path& path) {
    write_png(path, image.width, image.height, 8, image.pixels);
}

const std::vector<std::array<std::uint8_t, 3>>& colorwheel() {
    static const std::vector<std::array<std::uint8_t, 3>> wheel = [] {
        constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
        std::vector<std::array<std::uint8_t, 3>> w;
        auto ramp = [](int i, int n) { return static_cast<std::uint8_t>(std::floor(255.0 * i / n)); };
        for (int i = 0; i < RY; ++i) w.push_back({255, ramp(i, RY), 0});
        for (int i = 0; i < YG; ++i) w.push_back({static_cast<std::uint8_t>(255 - ramp(i, YG)), 255, 0});
        for (int i = 0; i < GC; ++i) w.push_back({0, 255, ramp(i, GC)});
        for (int i = 0; i < CB; ++i) w.push_back({0, static_cast<std::uint8_t>(255 - ramp(i, CB)), 255});
        for (int i = 0; i < BM; ++i) w.push_back({ramp(i, BM), 0, 255});
        for (int i = 0; i < MR; ++i) w.push_back({255, 0, static_cast<std::uint8_t>(255 - ramp(i, MR))});
        return w;
    }();
    return wheel;
}

RgbImage render_colorwheel(const FlowField& field, std::optional<double> max_mag) {
    const std::size_t n = field.pixels();
    if (!max_mag) {
        std::vector<double> mags;
        mags.reserve(n);
        for (std::size_t p = 0; p < n; ++p) {
            if (field.is_valid(p)) mags.push_back(std::hypot(field.data[2 * p], field.data[2 * p + 1]));
        }
        double q = 0.0;
        if (!mags.empty()) {
            const std::size_t k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(mags.size() - 1)));
            std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
            q = mags[k];
        }
        max_mag = q;
    }
    const auto& wheel = colorwheel();
    const int ncols = static_cast<int>(wheel.size());
    RgbImage img{field.width(), field.height(), std::vector<std::uint8_t>(n * 3, 255)};
    for (std::size_t p = 0; p < n; ++p) {
        std::uint8_t* px = img.pixels.data() + p * 3;
        if (!field.is_valid(p)) {
            px[0] = px[1] = px[2] = 0;
            continue;
        }
        const double u = field.data[2 * p], v = field.data[2 * p + 1];
        const double mag = std::hypot(u, v);
        const double rad = *max_mag > 0.0 ? std::min(mag / *max_mag, 1.0) : 0.0;
        if (rad == 0.0) continue;  // wheel centre is white
        const double a = std::atan2(-v, -u) / M_PI;
        const double fk = (a + 1.0) / 2.0 * (ncols - 1);
        const int k0 = static_cast<int>(std::floor(fk));
        const int k1 = (k0 + 1) % ncols;
        const double f = fk - k0;
        for (int ch = 0; ch < 3; ++ch) {
            const double c0 = wheel[static_cast<std::size_t>(k0)][ch] / 255.0;
            const double c1 = wheel[static_cast<std::size_t>(k1)][ch] / 255.0;
            const double col = 1.0 - rad * (1.0 - ((1.0 - f) * c0 + f * c1));
            px[ch] = static_cast<std::uint8_t>(std::floor(255.0 * col));
        }
    }
    return img;
}

}  // namespace flowmatch
