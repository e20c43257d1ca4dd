#include <doctest.h>

#include "binary_io.hpp"
#include "flowmatch/weights.hpp"
#include "test_util.hpp"

using namespace flowmatch;

TEST_CASE("weight file round trip is byte-identical") {
    testutil::TempDir dir;
    const ModelWeights w = ModelWeights::random(12, 4, 16, 2, 9);
    save_weights(w, dir / "a.fmw");
    const ModelWeights back = load_weights(dir / "a.fmw");
    save_weights(back, dir / "b.fmw");
    CHECK(io::read_file(dir / "a.fmw") == io::read_file(dir / "b.fmw"));
    CHECK(back.feature_dim() == 16);
    CHECK(back.interaction.blocks.size() == 2);
}

TEST_CASE("canonical parameter names") {
    const auto table = to_tensor_table(ModelWeights::random(12, 4, 16, 1, 9));
    std::vector<std::string> names;
    for (const auto& [name, t] : table) names.push_back(name);
    CHECK(names.front() == "proj.0.weight");
    CHECK(std::find(names.begin(), names.end(), "fusion.input.bias") != names.end());
    CHECK(std::find(names.begin(), names.end(), "fusion.block.1.conv2.weight") != names.end());
    CHECK(std::find(names.begin(), names.end(), "interact.0.cross.v.weight") != names.end());
    CHECK(std::find(names.begin(), names.end(), "interact.0.ffn2.bias") != names.end());
}

TEST_CASE("weight file errors") {
    testutil::TempDir dir;
    const ModelWeights w = ModelWeights::random(12, 4, 16, 1, 9);
    const auto good = encode_tensor_table(to_tensor_table(w));

    SUBCASE("missing file") { CHECK_THROWS_AS(load_weights(dir / "none.fmw"), ConfigError); }
    SUBCASE("bad magic") {
        auto bad = good;
        bad[1] = 'X';
        CHECK_THROWS_AS(decode_tensor_table(bad), WeightFileError);
    }
    SUBCASE("wrong version") {
        auto bad = good;
        bad[4] = 2;
        try {
            decode_tensor_table(bad);
            FAIL("accepted");
        } catch (const WeightFileError& e) {
            CHECK(e.offset() == 4);
        }
    }
    SUBCASE("truncated") {
        const std::vector<std::uint8_t> cut(good.begin(), good.begin() + good.size() / 2);
        CHECK_THROWS_AS(decode_tensor_table(cut), WeightFileError);
        io::write_file(dir / "cut.fmw", cut);
        CHECK_THROWS_AS(load_weights(dir / "cut.fmw"), ConfigError);
    }
    SUBCASE("corrupt payload") {
        auto bad = good;
        bad[40] ^= 0xff;
        CHECK_THROWS_WITH_AS(decode_tensor_table(bad), doctest::Contains("CRC"), WeightFileError);
    }
    SUBCASE("shape mismatch names the parameter") {
        auto table = to_tensor_table(w);
        for (auto& [name, t] : table) {
            if (name == "fusion.input.weight") t = Tensor({1, 1, 3, 16});
        }
        CHECK_THROWS_WITH_AS(from_tensor_table(table), doctest::Contains("fusion.input.weight"), ConfigError);
    }
    SUBCASE("missing and unexpected parameters") {
        auto table = to_tensor_table(w);
        table.erase(table.begin() + 1);
        CHECK_THROWS_WITH_AS(from_tensor_table(table), doctest::Contains("proj.0.bias"), ConfigError);
        table = to_tensor_table(w);
        table.emplace_back("extra.weight", Tensor({1}));
        CHECK_THROWS_WITH_AS(from_tensor_table(table), doctest::Contains("extra.weight"), ConfigError);
    }
}
