#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "flowmatch/flow_io.hpp"
#include "flowmatch/harness.hpp"
#include "flowmatch/pipeline.hpp"
#include "test_util.hpp"

using namespace flowmatch;
using json = nlohmann::ordered_json;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "flowmatch");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = harness::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

FlowField constant_field(std::size_t h, std::size_t w, float u, float v) {
    Tensor t({h, w, 2});
    for (std::size_t p = 0; p < h * w; ++p) {
        t[2 * p] = u;
        t[2 * p + 1] = v;
    }
    return FlowField(t);
}

}  // namespace

TEST_CASE("infer end to end") {
    testutil::TempDir dir;
    const auto pair = (dir / "pair").string();
    write_text(dir / "model.cfg", "interaction_blocks = 1\nfeature_dim = 16\nseed = 4\n");
    REQUIRE(cli({"synth", "--out", pair, "--height", "6", "--width", "5", "--channels", "12", "--dx", "1", "--mode",
                 "random"}).code == 0);
    REQUIRE(cli({"init-weights", "--out", (dir / "w.fmw").string(), "--config", (dir / "model.cfg").string(),
                 "--semantic-channels", "12", "--depth-channels", "4"}).code == 0);

    const std::vector<std::string> base = {"infer", "--pair", pair, "--weights", (dir / "w.fmw").string(),
                                           "--config", (dir / "model.cfg").string()};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    const Run r = cli(with({"--out", (dir / "a.flo").string(), "--viz", (dir / "a.png").string(), "--max-mag", "10",
                            "--manifest", (dir / "m.json").string()}));
    REQUIRE(r.code == 0);

    const InferResult ref =
        infer(load_bundle(pair), load_weights(dir / "w.fmw"), load_config(dir / "model.cfg"));
    CHECK(read_flo(dir / "a.flo") == ref.flow);

    REQUIRE(cli(with({"--out", (dir / "b.flo").string(), "--viz", (dir / "b.png").string(), "--max-mag", "10"})).code == 0);
    CHECK(io::read_file(dir / "a.png") == io::read_file(dir / "b.png"));
    CHECK(io::read_file(dir / "a.flo") == io::read_file(dir / "b.flo"));

    const json m = read_json(dir / "m.json");
    CHECK(m["command"] == "infer");
    CHECK(m["stage_counts"]["matcher"] == 1);
    CHECK(m["stage_counts"]["propagation"] == 1);
    CHECK(m["weights_digest"].get<std::string>().rfind("crc32:", 0) == 0);
    CHECK(m["timings_s"].contains("matching"));
    CHECK(m["aggregate"].contains("EPE"));

    CHECK(cli(with({"--out", (dir / "c.flo").string()})).out == cli(with({"--out", (dir / "c.flo").string()})).out);
}

TEST_CASE("infer exit codes") {
    testutil::TempDir dir;
    const auto pair = (dir / "pair").string();
    write_text(dir / "model.cfg", "interaction_blocks = 0\nfeature_dim = 16\n");
    REQUIRE(cli({"synth", "--out", pair, "--height", "4", "--width", "4", "--channels", "16"}).code == 0);
    REQUIRE(cli({"init-weights", "--out", (dir / "w.fmw").string(), "--config", (dir / "model.cfg").string(),
                 "--semantic-channels", "16", "--depth-channels", "4", "--identity"}).code == 0);
    auto infer_with = [&](const std::string& weights, const std::string& config) {
        return cli({"infer", "--pair", pair, "--weights", weights, "--config", config, "--out",
                    (dir / "o.flo").string()});
    };
    CHECK(infer_with((dir / "w.fmw").string(), (dir / "model.cfg").string()).code == harness::kOk);

    const Run missing = infer_with((dir / "nope.fmw").string(), (dir / "model.cfg").string());
    CHECK(missing.code == harness::kConfigError);
    CHECK(missing.err.find("weight file not found") != std::string::npos);

    write_text(dir / "bad.cfg", "feature_dim = 32\n");
    CHECK(infer_with((dir / "w.fmw").string(), (dir / "bad.cfg").string()).code == harness::kConfigError);
    write_text(dir / "cap.cfg", "interaction_blocks = 0\nfeature_dim = 16\ncorrelation_cap = 8\n");
    CHECK(infer_with((dir / "w.fmw").string(), (dir / "cap.cfg").string()).code == harness::kConfigError);

    auto bytes = io::read_file(dir / "pair" / "dino_2.ftx");
    bytes[0] = 'X';
    io::write_file(dir / "pair" / "dino_2.ftx", bytes);
    const Run corrupt = infer_with((dir / "w.fmw").string(), (dir / "model.cfg").string());
    CHECK(corrupt.code == harness::kFormatError);
    CHECK(corrupt.err.find("dino_2.ftx") != std::string::npos);

    CHECK(cli({"infer", "--pair", pair}).code == harness::kConfigError);
    CHECK(cli({"frobnicate"}).code == harness::kConfigError);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("eval manifest") {
    testutil::TempDir dir;
    const FlowField gt_a(testutil::random_tensor({6, 8, 2}, 1, 15.0));
    FlowField gt_b = constant_field(2, 2, 0.f, 0.f);
    write_flo(gt_a, dir / "gt_a.flo");
    write_flo(gt_b, dir / "gt_b.flo");
    write_flo(gt_a, dir / "pred_a.flo");
    write_flo(constant_field(2, 2, 3.f, 4.f), dir / "pred_b.flo");
    write_flo(constant_field(3, 3, 0.f, 0.f), dir / "pred_bad.flo");
    const auto p = [&](const char* n) { return (dir / n).string(); };

    SUBCASE("identical prediction") {
        const Run r = cli({"eval", "--pred", p("pred_a.flo"), "--gt", p("gt_a.flo"), "--manifest", p("m.json")});
        REQUIRE(r.code == 0);
        const json m = read_json(dir / "m.json");
        CHECK(m["aggregate"]["EPE"] == 0.0);
        CHECK(m["aggregate"]["F1-all"] == 0.0);
        const std::vector<std::string> keys = {"EPE", "s0-10", "s10-40", "s40+", "F1-all"};
        std::vector<std::string> got;
        for (auto it = m["aggregate"].begin(); it != m["aggregate"].end() && got.size() < 5; ++it) got.push_back(it.key());
        CHECK(got == keys);
        CHECK(r.out.find("s10-40") != std::string::npos);
    }
    SUBCASE("3-4-5 pair and pixel weighting") {
        const Run r = cli({"eval", "--pred", p("pred_a.flo"), p("pred_b.flo"), "--gt", p("gt_a.flo"), p("gt_b.flo"),
                           "--manifest", p("m.json")});
        REQUIRE(r.code == 0);
        const json m = read_json(dir / "m.json");
        CHECK(m["pairs"][1]["metrics"]["EPE"] == 5.0);
        CHECK(m["aggregate"]["EPE"].get<double>() == doctest::Approx(5.0 * 4 / 52));
        double sum = 0, count = 0;
        for (const auto& pair : m["pairs"]) {
            sum += pair["metrics"]["EPE"].get<double>() * pair["metrics"]["valid_pixels"].get<double>();
            count += pair["metrics"]["valid_pixels"].get<double>();
        }
        CHECK(std::abs(sum / count - m["aggregate"]["EPE"].get<double>()) < 1e-9);
        CHECK(cli({"eval", "--pred", p("pred_a.flo"), p("pred_b.flo"), "--gt", p("gt_a.flo"), p("gt_b.flo")}).out == r.out);
    }
    SUBCASE("mismatched pairs are skipped") {
        const Run r = cli({"eval", "--pred", p("pred_bad.flo"), p("pred_b.flo"), "--gt", p("gt_b.flo"), p("gt_b.flo"),
                           "--manifest", p("m.json")});
        CHECK(r.code == 0);
        const json m = read_json(dir / "m.json");
        CHECK(m["pairs"][0]["status"] == "skipped");
        CHECK(m["aggregate"]["EPE"] == 5.0);

        CHECK(cli({"eval", "--pred", p("pred_bad.flo"), "--gt", p("gt_b.flo")}).code == harness::kNoData);
        CHECK(cli({"eval", "--pred", p("missing.flo"), "--gt", p("gt_b.flo")}).code == harness::kNoData);
        CHECK(cli({"eval", "--pred", p("pred_a.flo"), "--gt", p("gt_a.flo"), p("gt_b.flo")}).code ==
              harness::kConfigError);
    }
}

TEST_CASE("selftest command") {
    const Run all = cli({"selftest"});
    CHECK(all.code == 0);
    for (const auto& name : harness::selftest_suite_names()) CHECK(all.out.find(name) != std::string::npos);

    const Run one = cli({"selftest", "--filter", "gradcheck"});
    CHECK(one.code == 0);
    CHECK(one.out.find("gradcheck") != std::string::npos);
    CHECK(one.out.find("codec") == std::string::npos);

    CHECK(cli({"selftest", "--filter", "nope"}).code == harness::kConfigError);
}

TEST_CASE("selftest catches a softmax without max subtraction") {
    harness::SelftestArgs args;
    args.filter = "normalization";
    args.softmax = [](float* row, std::size_t n) {
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(double(row[j]));
        for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<float>(std::exp(double(row[j])) / sum);
    };
    std::ostringstream out, err;
    CHECK(harness::cmd_selftest(args, out, err) == harness::kSelftestFailed);
    CHECK(err.str().find("normalization") != std::string::npos);
}
