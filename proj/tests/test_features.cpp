#include <doctest.h>

#include <cstring>

#include "binary_io.hpp"
#include "flowmatch/features.hpp"
#include "flowmatch/flow_io.hpp"
#include "test_util.hpp"

using namespace flowmatch;

namespace {

std::vector<std::uint8_t> fixture_2x2() {
    io::ByteWriter w;
    for (char ch : std::string("FTX1")) w.u8(static_cast<std::uint8_t>(ch));
    w.u8(1);  // version
    w.u8(2);  // synthetic
    w.u8(1);  // frame
    w.u8(0);
    for (std::uint32_t v : {2u, 2u, 1u, 8u, 16u, 16u}) w.u32(v);
    const float payload[4] = {1, 2, 3, 4};
    io::put_f32_array(w, payload);
    std::vector<std::uint8_t> bytes = std::move(w).take();
    const std::uint32_t crc = io::crc32(std::span(bytes).subspan(32, 16));
    io::ByteWriter tail;
    tail.u32(crc);
    const auto t = std::move(tail).take();
    bytes.insert(bytes.end(), t.begin(), t.end());
    return bytes;
}

std::size_t format_offset(std::span<const std::uint8_t> bytes) {
    try {
        decode_ftx(bytes);
    } catch (const FormatError& e) {
        return e.offset();
    }
    FAIL("decode_ftx accepted a corrupt record");
    return 0;
}

}  // namespace

TEST_CASE("FTX hand-built fixture") {
    const FeatureRecord r = decode_ftx(fixture_2x2());
    CHECK(r.source == FeatureSource::Synthetic);
    CHECK(r.data.shape() == Shape{2, 2, 1});
    CHECK(r.data == Tensor({2, 2, 1}, {1, 2, 3, 4}));
    CHECK(encode_ftx(r) == fixture_2x2());
}

TEST_CASE("FTX round trip through a file") {
    testutil::TempDir dir;
    FeatureRecord r;
    r.source = FeatureSource::Dino;
    r.frame_index = 2;
    r.image_h = 61;
    r.image_w = 40;
    r.data = testutil::random_tensor({8, 5, 3}, 1);
    write_ftx(r, dir / "r.ftx");
    const FeatureRecord back = read_ftx(dir / "r.ftx");
    CHECK(back == r);
    CHECK(std::memcmp(back.data.data(), r.data.data(), r.data.size() * 4) == 0);
}

TEST_CASE("FTX corruption is located") {
    const auto good = fixture_2x2();
    auto bad = good;
    bad[0] = 'G';
    CHECK(format_offset(bad) == 0);
    bad = good;
    bad[4] = 9;
    CHECK(format_offset(bad) == 4);
    bad = good;
    bad[7] = 1;  // dtype other than f32-le
    CHECK(format_offset(bad) == 7);
    bad = good;
    bad[40] ^= 0x01;
    CHECK(format_offset(bad) == 48);
    bad = good;
    bad.push_back(0);
    CHECK(format_offset(bad) == 52);

    bad.assign(good.begin(), good.begin() + 44);
    CHECK(format_offset(bad) == 32);
    CHECK_THROWS_WITH_AS(decode_ftx(bad), doctest::Contains("truncated"), FormatError);
    bad.assign(good.begin(), good.begin() + 10);
    CHECK_THROWS_AS(decode_ftx(bad), FormatError);
}

TEST_CASE("DINO records obey the 1/8 grid law") {
    FeatureRecord r;
    r.source = FeatureSource::Dino;
    r.image_h = 64;
    r.image_w = 60;
    r.data = Tensor({8, 8, 2});
    CHECK_NOTHROW(r.validate());
    r.image_w = 70;
    CHECK_THROWS_AS(r.validate(), DimensionError);
    r.image_w = 60;
    r.stride = 14;
    CHECK_THROWS_AS(r.validate(), DimensionError);
    CHECK_THROWS_AS(encode_ftx(r), DimensionError);

    auto bytes = fixture_2x2();
    bytes[5] = 0;  // DINO
    CHECK_NOTHROW(decode_ftx(bytes));
    bytes[24] = 40;  // image_h 40 needs a 5-row grid
    CHECK(format_offset(bytes) == 8);
}

TEST_CASE("synthetic shifted pair") {
    SynthOptions o;
    o.h = o.w = 4;
    o.c = 16;
    SUBCASE("zero shift") {
        const FramePairBundle b = synth_shifted_pair(o);
        for (float v : b.ground_truth_cells->values()) CHECK(v == 0.f);
        for (float v : b.ground_truth->data.values()) CHECK(v == 0.f);
    }
    SUBCASE("shift (1,0)") {
        o.dx = 1;
        const FramePairBundle b = synth_shifted_pair(o);
        CHECK_NOTHROW(b.validate());
        for (std::size_t p = 0; p < 16; ++p) {
            CHECK((*b.ground_truth_cells)[2 * p] == 1.f);
            CHECK((*b.ground_truth_cells)[2 * p + 1] == 0.f);
        }
        CHECK(b.ground_truth->u(0, 0) == 8.f);
        CHECK(b.image_h == 32);
        // frame2(y, x) == frame1(y, x - 1), cyclic
        const Tensor& f1 = b.semantic[0].data;
        const Tensor& f2 = b.semantic[1].data;
        for (std::size_t y = 0; y < 4; ++y) {
            for (std::size_t x = 0; x < 4; ++x) {
                for (std::size_t c = 0; c < 16; ++c) CHECK(f2(y, (x + 1) % 4, c) == f1(y, x, c));
            }
        }
        // True-match logit equals the sharpness.
        double dot = 0;
        for (std::size_t c = 0; c < 16; ++c) dot += double(f1(2, 1, c)) * f2(2, 2, c);
        CHECK(dot / 4.0 == doctest::Approx(50.0).epsilon(1e-5));
        CHECK(b.depth[0].data.shape() == Shape{8, 8, 4});
        CHECK(b.depth[0].stride == 4);
    }
    SUBCASE("one-hot needs enough channels") {
        o.c = 8;
        CHECK_THROWS_AS(synth_shifted_pair(o), DimensionError);
    }
}

TEST_CASE("bundle directory round trip") {
    testutil::TempDir dir;
    SynthOptions o;
    o.mode = SynthMode::Random;
    o.dx = -2;
    o.dy = 1;
    const FramePairBundle b = synth_shifted_pair(o);
    save_bundle(b, dir.path());
    const FramePairBundle back = load_bundle(dir.path());
    CHECK(back.semantic[0] == b.semantic[0]);
    CHECK(back.depth[1] == b.depth[1]);
    REQUIRE(back.ground_truth);
    CHECK(*back.ground_truth == *b.ground_truth);

    std::filesystem::remove(dir / kDepthFiles[1]);
    CHECK_THROWS_AS(load_bundle(dir.path()), FormatError);
}
