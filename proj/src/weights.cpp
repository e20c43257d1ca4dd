#include "flowmatch/weights.hpp"

#include <map>
#include <set>

#include "binary_io.hpp"

namespace flowmatch {

void ModelWeights::validate() const {
    fusion.validate();
    interaction.validate(feature_dim());
}

ModelWeights ModelWeights::random(std::size_t semantic_channels, std::size_t depth_channels, std::size_t feature_dim,
                                  std::size_t interaction_blocks, std::uint64_t seed) {
    ModelWeights w;
    w.fusion = FusionWeights::random(semantic_channels, depth_channels, feature_dim, seed);
    w.interaction = InteractionWeights::random(feature_dim, interaction_blocks, seed ^ 0x9e3779b97f4a7c15ULL);
    w.validate();
    return w;
}

std::vector<std::uint8_t> encode_tensor_table(std::span<const NamedTensor> tensors) {
    io::ByteWriter w;
    w.raw(std::string("FMW1"));
    w.u8(kWeightFileVersion);
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name.substr(0, 32) + "...");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.raw(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        const std::size_t begin = w.size();
        io::put_f32_array(w, t.values());
        w.u32(io::crc32(std::span(w.bytes()).subspan(begin)));
    }
    return std::move(w).take();
}

std::vector<NamedTensor> decode_tensor_table(std::span<const std::uint8_t> bytes) {
    try {
        io::ByteReader r(bytes);
        auto magic = r.raw(4, "weight magic");
        if (std::string(magic.begin(), magic.end()) != "FMW1") throw WeightFileError("bad weight-file magic", 0);
        if (const auto v = r.u8("weight version"); v != kWeightFileVersion) {
            throw WeightFileError("unsupported weight-file version " + std::to_string(v), 4);
        }
        r.raw(3, "weight header");
        const std::uint32_t count = r.u32("tensor count");
        std::vector<NamedTensor> out;
        std::set<std::string> seen;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::size_t entry_at = r.offset();
            const auto len = r.u16("tensor name length");
            auto name_bytes = r.raw(len, "tensor name");
            std::string name(name_bytes.begin(), name_bytes.end());
            if (!seen.insert(name).second) throw WeightFileError("duplicate tensor " + name, entry_at);
            const auto rank = r.u8("tensor rank");
            Shape shape(rank);
            for (auto& d : shape) d = r.u32("tensor dims");
            const std::size_t n = shape_size(shape);
            const std::size_t payload_at = r.offset();
            if (r.remaining() < n * 4) {
                throw WeightFileError("truncated payload of " + name + ": declared " + shape_string(shape), payload_at);
            }
            std::vector<float> values(n);
            io::get_f32_array(r, values, "tensor payload");
            const std::size_t crc_at = r.offset();
            if (r.u32("tensor CRC") != io::crc32(bytes.subspan(payload_at, n * 4))) {
                throw WeightFileError("CRC mismatch in " + name, crc_at);
            }
            out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
        }
        if (r.remaining() != 0) throw WeightFileError("trailing bytes after tensor table", r.offset());
        return out;
    } catch (const FormatError& e) {
        throw WeightFileError(e);
    }
}

namespace {

void put_conv(std::vector<NamedTensor>& t, const std::string& name, const ConvLayer& l) {
    t.emplace_back(name + ".weight", l.weight);
    t.emplace_back(name + ".bias", l.bias);
}

void put_linear(std::vector<NamedTensor>& t, const std::string& name, const Linear& l) {
    t.emplace_back(name + ".weight", l.weight);
    t.emplace_back(name + ".bias", l.bias);
}

class Table {
public:
    explicit Table(const std::vector<NamedTensor>& entries) {
        for (const auto& [name, t] : entries) map_.emplace(name, &t);
    }
    bool has(const std::string& name) const { return map_.count(name) != 0; }
    const Tensor& get(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw ConfigError("weight file is missing parameter " + name);
        used_.insert(name);
        return *it->second;
    }
    ConvLayer conv(const std::string& name) { return {get(name + ".weight"), get(name + ".bias")}; }
    Linear linear(const std::string& name) { return {get(name + ".weight"), get(name + ".bias")}; }
    void require_all_used() const {
        for (const auto& [name, _] : map_) {
            if (!used_.count(name)) throw ConfigError("weight file has unexpected parameter " + name);
        }
    }

private:
    std::map<std::string, const Tensor*> map_;
    std::set<std::string> used_;
};

}  // namespace

std::vector<NamedTensor> to_tensor_table(const ModelWeights& w) {
    std::vector<NamedTensor> t;
    for (std::size_t i = 0; i < w.fusion.projection.size(); ++i) put_conv(t, "proj." + std::to_string(i), w.fusion.projection[i]);
    put_conv(t, "fusion.input", w.fusion.input);
    for (std::size_t b = 0; b < w.fusion.blocks.size(); ++b) {
        const std::string base = "fusion.block." + std::to_string(b);
        put_conv(t, base + ".conv1", w.fusion.blocks[b].first);
        put_conv(t, base + ".conv2", w.fusion.blocks[b].second);
    }
    for (std::size_t b = 0; b < w.interaction.blocks.size(); ++b) {
        const std::string base = "interact." + std::to_string(b);
        const InteractionBlock& blk = w.interaction.blocks[b];
        for (const auto& [attn, kind] : {std::pair{&blk.self_attn, "self"}, std::pair{&blk.cross_attn, "cross"}}) {
            put_linear(t, base + "." + kind + ".q", attn->query);
            put_linear(t, base + "." + kind + ".k", attn->key);
            put_linear(t, base + "." + kind + ".v", attn->value);
            put_linear(t, base + "." + kind + ".o", attn->output);
        }
        put_linear(t, base + ".ffn1", blk.ffn_in);
        put_linear(t, base + ".ffn2", blk.ffn_out);
    }
    return t;
}

ModelWeights from_tensor_table(const std::vector<NamedTensor>& entries) {
    Table t(entries);
    ModelWeights w;
    for (std::size_t i = 0; t.has("proj." + std::to_string(i) + ".weight"); ++i) {
        w.fusion.projection.push_back(t.conv("proj." + std::to_string(i)));
    }
    w.fusion.input = t.conv("fusion.input");
    for (std::size_t b = 0; t.has("fusion.block." + std::to_string(b) + ".conv1.weight"); ++b) {
        const std::string base = "fusion.block." + std::to_string(b);
        w.fusion.blocks.push_back({t.conv(base + ".conv1"), t.conv(base + ".conv2")});
    }
    for (std::size_t b = 0; t.has("interact." + std::to_string(b) + ".self.q.weight"); ++b) {
        const std::string base = "interact." + std::to_string(b);
        InteractionBlock blk;
        for (const auto& [attn, kind] : {std::pair{&blk.self_attn, "self"}, std::pair{&blk.cross_attn, "cross"}}) {
            attn->query = t.linear(base + "." + kind + ".q");
            attn->key = t.linear(base + "." + kind + ".k");
            attn->value = t.linear(base + "." + kind + ".v");
            attn->output = t.linear(base + "." + kind + ".o");
        }
        blk.ffn_in = t.linear(base + ".ffn1");
        blk.ffn_out = t.linear(base + ".ffn2");
        w.interaction.blocks.push_back(std::move(blk));
    }
    t.require_all_used();
    w.validate();
    return w;
}

ModelWeights load_weights(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("weight file not found: " + path.string());
    std::vector<std::uint8_t> bytes;
    try {
        bytes = io::read_file(path);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    return from_tensor_table(decode_tensor_table(bytes));
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    weights.validate();
    io::write_file(path, encode_tensor_table(to_tensor_table(weights)));
}

}  // namespace flowmatch
