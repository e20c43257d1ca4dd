#include "flowmatch/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "flowmatch/propagation.hpp"

namespace flowmatch {

void PipelineConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1], got " + std::to_string(gamma));
    if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
    if (correlation_cap == 0) throw ConfigError("correlation_cap must be positive");
    if (block == 0) throw ConfigError("block must be positive");
}

MatchOptions PipelineConfig::match_options() const {
    return MatchOptions{KernelOptions{block, deterministic}, correlation_cap};
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out{};
    if (!(in >> out) || !in.eof() || (std::is_unsigned_v<T> && v.front() == '-')) {
        throw ConfigError(key + ": malformed value '" + v + "'");
    }
    return out;
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
    PipelineConfig cfg;
    const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
        {"fusion_enabled", [&](auto& k, auto& v) { cfg.fusion_enabled = parse_bool(k, v); }},
        {"interaction_blocks", [&](auto& k, auto& v) { cfg.interaction_blocks = parse_number<std::size_t>(k, v); }},
        {"deterministic", [&](auto& k, auto& v) { cfg.deterministic = parse_bool(k, v); }},
        {"correlation_cap", [&](auto& k, auto& v) { cfg.correlation_cap = parse_number<std::size_t>(k, v); }},
        {"upsample_mode",
         [&](auto& k, auto& v) {
             if (v != "bilinear_x8") throw ConfigError(k + ": only bilinear_x8 is supported, got '" + v + "'");
             cfg.upsample_mode = UpsampleMode::BilinearX8;
         }},
        {"gamma", [&](auto& k, auto& v) { cfg.gamma = parse_number<double>(k, v); }},
        {"seed", [&](auto& k, auto& v) { cfg.seed = parse_number<std::uint64_t>(k, v); }},
        {"feature_dim", [&](auto& k, auto& v) { cfg.feature_dim = parse_number<std::size_t>(k, v); }},
        {"block", [&](auto& k, auto& v) { cfg.block = parse_number<std::size_t>(k, v); }},
    };
    std::istringstream in(text);
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (value.empty()) throw ConfigError(key + ": empty value");
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const PipelineConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "fusion_enabled = " << (cfg.fusion_enabled ? "true" : "false") << "\n"
        << "interaction_blocks = " << cfg.interaction_blocks << "\n"
        << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n"
        << "correlation_cap = " << cfg.correlation_cap << "\n"
        << "upsample_mode = bilinear_x8\n"
        << "gamma = " << cfg.gamma << "\n"
        << "seed = " << cfg.seed << "\n"
        << "feature_dim = " << cfg.feature_dim << "\n"
        << "block = " << cfg.block << "\n";
    return out.str();
}

Tensor upsample_flow(const Tensor& flow_low, std::size_t height, std::size_t width) {
    if (flow_low.rank() != 3 || flow_low.dim(2) != 2) throw DimensionError("upsample_flow: flow must be h x w x 2");
    Tensor up = bilinear_resize(flow_low, height, width);
    const double su = static_cast<double>(width) / static_cast<double>(flow_low.dim(1));
    const double sv = static_cast<double>(height) / static_cast<double>(flow_low.dim(0));
    for (std::size_t p = 0; p < up.size() / 2; ++p) {
        up[2 * p] = static_cast<float>(up[2 * p] * su);
        up[2 * p + 1] = static_cast<float>(up[2 * p + 1] * sv);
    }
    return up;
}

void check_compatible(const ModelWeights& weights, const PipelineConfig& cfg) {
    cfg.validate();
    if (weights.feature_dim() != cfg.feature_dim) {
        throw ConfigError("fusion.input.weight produces width " + std::to_string(weights.feature_dim()) +
                          " but feature_dim = " + std::to_string(cfg.feature_dim));
    }
    if (weights.interaction.blocks.size() != cfg.interaction_blocks) {
        throw ConfigError("weight file holds " + std::to_string(weights.interaction.blocks.size()) +
                          " interaction blocks (interact.*) but interaction_blocks = " +
                          std::to_string(cfg.interaction_blocks));
    }
}

InferResult infer(const FramePairBundle& bundle, const ModelWeights& weights, const PipelineConfig& cfg) {
    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };

    check_compatible(weights, cfg);
    bundle.validate();
    const auto counts_before = instrumentation::thread_counts();
    const MatchOptions mopts = cfg.match_options();
    InferResult r;

    const auto t0 = clock::now();
    const FusedFeatures fused = fuse_pair(bundle, weights.fusion, cfg.fusion_enabled);
    const auto t1 = clock::now();
    const auto [f1, f2] = interact(fused.f1_hat, fused.f2_hat, weights.interaction, mopts.kernel);
    const auto t2 = clock::now();
    r.flow_raw = match_flow(f1, f2, mopts);
    const auto t3 = clock::now();
    r.flow_prop = propagate_flow(f1, r.flow_raw, mopts);
    const auto t4 = clock::now();
    r.flow = FlowField(upsample_flow(r.flow_prop, bundle.image_h, bundle.image_w));
    r.flow_raw_full = FlowField(upsample_flow(r.flow_raw, bundle.image_h, bundle.image_w));
    const auto t5 = clock::now();

    r.stage_counts = instrumentation::thread_counts() - counts_before;
    r.timings = {seconds(t0, t1), seconds(t1, t2), seconds(t2, t3), seconds(t3, t4), seconds(t4, t5)};
    return r;
}

}  // namespace flowmatch
