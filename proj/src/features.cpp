#include "flowmatch/features.hpp"

#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "flowmatch/flow_io.hpp"

namespace flowmatch {

const char* to_string(FeatureSource s) {
    switch (s) {
        case FeatureSource::Dino: return "DINO";
        case FeatureSource::Depth: return "DEPTH";
        case FeatureSource::Synthetic: return "SYNTHETIC";
    }
    return "?";
}

void FeatureRecord::validate() const {
    if (data.rank() != 3 || data.empty()) {
        throw DimensionError("feature record must be a non-empty h x w x c map, got " + shape_string(data.shape()));
    }
    if (stride < 1) throw DimensionError("feature record stride must be >= 1");
    if (frame_index != 1 && frame_index != 2) throw DimensionError("frame_index must be 1 or 2");
    if (source == FeatureSource::Dino) {
        const std::size_t gh = (image_h + 7) / 8, gw = (image_w + 7) / 8;
        if (stride != 8 || h() != gh || w() != gw) {
            throw DimensionError("DINO record " + std::to_string(h()) + "x" + std::to_string(w()) + " (stride " +
                                 std::to_string(stride) + ") violates the 1/8 grid law for image " +
                                 std::to_string(image_h) + "x" + std::to_string(image_w));
        }
    }
}

std::vector<std::uint8_t> encode_ftx(const FeatureRecord& rec) {
    rec.validate();
    io::ByteWriter w;
    w.raw(std::string("FTX1"));
    w.u8(kFtxVersion);
    w.u8(static_cast<std::uint8_t>(rec.source));
    w.u8(rec.frame_index);
    w.u8(0);
    for (std::size_t v : {rec.h(), rec.w(), rec.c()}) w.u32(static_cast<std::uint32_t>(v));
    w.u32(rec.stride);
    w.u32(rec.image_h);
    w.u32(rec.image_w);
    const std::size_t payload_begin = w.size();
    io::put_f32_array(w, rec.data.values());
    const auto crc = io::crc32(std::span(w.bytes()).subspan(payload_begin));
    w.u32(crc);
    return std::move(w).take();
}

FeatureRecord decode_ftx(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    auto magic = r.raw(4, "FTX magic");
    if (std::string(magic.begin(), magic.end()) != "FTX1") throw FormatError("bad FTX magic", 0);
    if (const auto version = r.u8("FTX version"); version != kFtxVersion) {
        throw FormatError("unsupported FTX version " + std::to_string(version), 4);
    }
    const auto source = r.u8("FTX source");
    if (source > 2) throw FormatError("unknown FTX source code " + std::to_string(source), 5);
    const auto frame = r.u8("FTX frame index");
    if (frame != 1 && frame != 2) throw FormatError("FTX frame index must be 1 or 2", 6);
    // The reserved byte doubles as the dtype tag: only 0 (f32 little endian) exists.
    if (r.u8("FTX reserved byte") != 0) throw FormatError("FTX dtype/reserved byte is not 0 (f32-le)", 7);

    std::uint32_t dims[6];
    const char* names[6] = {"h", "w", "c", "stride", "image_h", "image_w"};
    for (int i = 0; i < 6; ++i) {
        const std::size_t at = r.offset();
        dims[i] = r.u32("FTX header");
        if (dims[i] == 0 && i < 4) throw FormatError(std::string("FTX ") + names[i] + " is zero", at);
    }
    const std::uint64_t count = std::uint64_t{dims[0]} * dims[1] * dims[2];
    if (count * 4 > r.remaining()) {
        throw FormatError("truncated FTX payload: need " + std::to_string(count * 4) + " bytes, have " +
                              std::to_string(r.remaining()),
                          r.offset());
    }
    const std::size_t payload_at = r.offset();
    const auto payload = bytes.subspan(payload_at, static_cast<std::size_t>(count * 4));
    std::vector<float> values(static_cast<std::size_t>(count));
    io::get_f32_array(r, values, "FTX payload");
    const std::size_t crc_at = r.offset();
    const auto stored = r.u32("FTX CRC");
    if (stored != io::crc32(payload)) throw FormatError("FTX payload CRC mismatch", crc_at);
    if (r.remaining() != 0) throw FormatError("trailing bytes after FTX CRC", r.offset());

    FeatureRecord rec;
    rec.source = static_cast<FeatureSource>(source);
    rec.frame_index = frame;
    rec.stride = dims[3];
    rec.image_h = dims[4];
    rec.image_w = dims[5];
    rec.data = Tensor({dims[0], dims[1], dims[2]}, std::move(values));
    try {
        rec.validate();
    } catch (const DimensionError& e) {
        throw FormatError(e.what(), 8);
    }
    return rec;
}

FeatureRecord read_ftx(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return decode_ftx(bytes);
    } catch (const FormatError& e) {
        throw e.prefixed(path.string() + ": ");
    }
}

void write_ftx(const FeatureRecord& rec, const std::filesystem::path& path) {
    io::write_file(path, encode_ftx(rec));
}

void FramePairBundle::validate() const {
    for (int f = 0; f < 2; ++f) {
        const FeatureRecord& s = semantic[f];
        const FeatureRecord& d = depth[f];
        s.validate();
        d.validate();
        if (s.source == FeatureSource::Depth) throw DimensionError("semantic slot holds a DEPTH record");
        if (d.source == FeatureSource::Dino) throw DimensionError("depth slot holds a DINO record");
        if (s.frame_index != f + 1 || d.frame_index != f + 1) {
            throw DimensionError("bundle records are not ordered by frame index");
        }
        for (const FeatureRecord* r : {&s, &d}) {
            if (r->image_h != image_h || r->image_w != image_w) {
                throw DimensionError("bundle records declare different image sizes");
            }
        }
    }
    if (semantic[0].data.shape() != semantic[1].data.shape() || depth[0].data.shape() != depth[1].data.shape()) {
        throw DimensionError("frame 1 and frame 2 feature shapes differ");
    }
    if (ground_truth && (ground_truth->height() != image_h || ground_truth->width() != image_w)) {
        throw DimensionError("ground-truth flow extent differs from the declared image size");
    }
}

FramePairBundle load_bundle(const std::filesystem::path& dir) {
    FramePairBundle b;
    for (int f = 0; f < 2; ++f) {
        b.semantic[f] = read_ftx(dir / kSemanticFiles[f]);
        b.depth[f] = read_ftx(dir / kDepthFiles[f]);
    }
    b.image_h = b.semantic[0].image_h;
    b.image_w = b.semantic[0].image_w;
    if (std::filesystem::exists(dir / kGroundTruthFile)) b.ground_truth = read_flo(dir / kGroundTruthFile);
    try {
        b.validate();
    } catch (const DimensionError& e) {
        throw FormatError(dir.string() + ": inconsistent bundle: " + e.what());
    }
    return b;
}

void save_bundle(const FramePairBundle& bundle, const std::filesystem::path& dir) {
    bundle.validate();
    std::filesystem::create_directories(dir);
    for (int f = 0; f < 2; ++f) {
        write_ftx(bundle.semantic[f], dir / kSemanticFiles[f]);
        write_ftx(bundle.depth[f], dir / kDepthFiles[f]);
    }
    if (bundle.ground_truth) write_flo(*bundle.ground_truth, dir / kGroundTruthFile);
}

namespace {

std::size_t wrap(long v, std::size_t n) {
    const long m = static_cast<long>(n);
    return static_cast<std::size_t>(((v % m) + m) % m);
}

// out[y][x] = in[y - dy][x - dx] (cyclic): content moves by (+dx, +dy).
Tensor cyclic_shift(const Tensor& in, long dx, long dy) {
    const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
    Tensor out(in.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sy = wrap(static_cast<long>(y) - dy, h);
            const std::size_t sx = wrap(static_cast<long>(x) - dx, w);
            std::copy_n(in.data() + (sy * w + sx) * c, c, out.data() + (y * w + x) * c);
        }
    }
    return out;
}

}  // namespace

FramePairBundle synth_shifted_pair(const SynthOptions& o) {
    if (o.h == 0 || o.w == 0 || o.c == 0) throw DimensionError("synth_shifted_pair: empty grid");
    if (std::abs(o.dx) >= static_cast<long>(o.w) || std::abs(o.dy) >= static_cast<long>(o.h)) {
        throw DimensionError("synth_shifted_pair: shift (" + std::to_string(o.dx) + "," + std::to_string(o.dy) +
                             ") out of range for a " + std::to_string(o.h) + "x" + std::to_string(o.w) + " grid");
    }
    if (o.mode == SynthMode::OneHot && o.c < o.h * o.w) {
        throw DimensionError("synth_shifted_pair: one-hot mode needs c >= h*w");
    }
    if (o.sharpness <= 0.0) throw DimensionError("synth_shifted_pair: sharpness must be positive");

    const std::size_t n = o.h * o.w;
    // |f|^2 / sqrt(c) == sharpness gives the true match a logit of exactly `sharpness`.
    const double norm = std::sqrt(o.sharpness * std::sqrt(static_cast<double>(o.c)));
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Tensor f1({o.h, o.w, o.c});
    for (std::size_t p = 0; p < n; ++p) {
        float* cell = f1.data() + p * o.c;
        if (o.mode == SynthMode::OneHot) {
            cell[p] = static_cast<float>(norm);
        } else {
            std::vector<double> g(o.c);
            double ss = 0.0;
            for (double& v : g) {
                v = gauss(rng);
                ss += v * v;
            }
            const double k = norm / std::sqrt(ss);
            for (std::size_t ch = 0; ch < o.c; ++ch) cell[ch] = static_cast<float>(g[ch] * k);
        }
    }

    const std::size_t up = std::max<std::size_t>(1, o.depth_upscale);
    if (8 % up != 0) throw DimensionError("synth_shifted_pair: depth_upscale must divide 8");
    Tensor z1({o.h * up, o.w * up, o.depth_channels});
    std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
    for (float& v : z1.values()) v = unit(rng);

    FramePairBundle b;
    b.image_h = static_cast<std::uint32_t>(o.h * 8);
    b.image_w = static_cast<std::uint32_t>(o.w * 8);
    const Tensor f2 = cyclic_shift(f1, o.dx, o.dy);
    const Tensor z2 = cyclic_shift(z1, o.dx * static_cast<long>(up), o.dy * static_cast<long>(up));
    for (int f = 0; f < 2; ++f) {
        FeatureRecord& s = b.semantic[f];
        s.source = FeatureSource::Synthetic;
        s.frame_index = static_cast<std::uint8_t>(f + 1);
        s.stride = 8;
        s.image_h = b.image_h;
        s.image_w = b.image_w;
        s.data = f == 0 ? f1 : f2;
        FeatureRecord& d = b.depth[f];
        d = s;
        d.stride = static_cast<std::uint32_t>(8 / up);
        d.data = f == 0 ? z1 : z2;
    }

    Tensor cells({o.h, o.w, 2});
    Tensor pixels({b.image_h, b.image_w, 2});
    for (std::size_t p = 0; p < n; ++p) {
        cells[2 * p] = static_cast<float>(o.dx);
        cells[2 * p + 1] = static_cast<float>(o.dy);
    }
    for (std::size_t p = 0; p < pixels.size() / 2; ++p) {
        pixels[2 * p] = static_cast<float>(8 * o.dx);
        pixels[2 * p + 1] = static_cast<float>(8 * o.dy);
    }
    b.ground_truth_cells = std::move(cells);
    b.ground_truth = FlowField(std::move(pixels));
    return b;
}

}  // namespace flowmatch
