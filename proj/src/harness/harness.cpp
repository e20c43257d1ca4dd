#include "flowmatch/harness.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "binary_io.hpp"
#include "flowmatch/features.hpp"
#include "flowmatch/flow_io.hpp"
#include "flowmatch/parallel.hpp"
#include "flowmatch/pipeline.hpp"

namespace flowmatch::harness {

using json = nlohmann::ordered_json;

namespace {

using clock = std::chrono::steady_clock;

double since(clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_json(const EvalReport& r) {
    json j;
    j["EPE"] = r.epe;
    j["s0-10"] = optional_number(r.bucket_epe[0]);
    j["s10-40"] = optional_number(r.bucket_epe[1]);
    j["s40+"] = optional_number(r.bucket_epe[2]);
    j["F1-all"] = r.f1_all;
    j["valid_pixels"] = r.valid_count;
    json counts;
    for (std::size_t b = 0; b < 3; ++b) counts[kBucketNames[b]] = r.bucket_counts[b];
    j["pixel_counts"] = counts;
    j["outliers"] = r.outliers;
    return j;
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
}

void print_row(std::ostream& out, const std::string& label, const EvalReport& r) {
    out << std::left << std::setw(24) << label;
    out << std::right << std::setw(10) << fmt(r.epe);
    for (std::size_t b = 0; b < 3; ++b) out << std::setw(10) << fmt(r.bucket_epe[b]);
    out << std::setw(10) << fmt(r.f1_all) << "\n";
}

void print_header(std::ostream& out) {
    out << std::left << std::setw(24) << "pair";
    for (const char* c : kMetricColumns) out << std::right << std::setw(10) << c;
    out << "\n";
}

std::string crc_digest(const std::string& path) {
    const auto bytes = io::read_file(path);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", io::crc32(bytes));
    return std::string("crc32:") + buf;
}

void write_text(const std::string& path, const std::string& text) {
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Maps library exceptions onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return kFormatError;
    } catch (const DimensionError& e) {
        err << "format error: " << e.what() << "\n";
        return kFormatError;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ResourceError& e) {
        err << "resource error: " << e.what() << "\n";
        return kConfigError;
    } catch (const UndefinedMetricError& e) {
        err << "no data: " << e.what() << "\n";
        return kNoData;
    }
}

}  // namespace

int cmd_infer(const InferArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto t0 = clock::now();
        const PipelineConfig cfg = load_config(args.config);
        const ModelWeights weights = load_weights(args.weights);
        const FramePairBundle bundle = load_bundle(args.pair_dir);
        const double load_s = since(t0);

        const InferResult result = infer(bundle, weights, cfg);
        write_flo(result.flow, args.out);
        if (args.viz) write_png_rgb8(render_colorwheel(result.flow, args.max_mag), *args.viz);

        out << "wrote " << args.out << " (" << result.flow.width() << "x" << result.flow.height() << ")\n";
        if (args.manifest) {
            json m;
            m["command"] = "infer";
            m["config"] = format_config(cfg);
            m["inputs"] = {{"pair", args.pair_dir}, {"weights", args.weights}, {"config", args.config}};
            m["weights_digest"] = crc_digest(args.weights);
            m["output"] = args.out;
            if (bundle.ground_truth) {
                const EvalReport r = epe(result.flow, *bundle.ground_truth);
                m["pairs"] = json::array({json{{"pred", args.out}, {"gt", args.pair_dir}, {"metrics", report_json(r)}}});
                m["aggregate"] = report_json(r);
            }
            m["stage_counts"] = {{"matcher", result.stage_counts.matcher}, {"propagation", result.stage_counts.propagation}};
            m["timings_s"] = {{"load", load_s},
                              {"fusion", result.timings.fusion_s},
                              {"interaction", result.timings.interaction_s},
                              {"matching", result.timings.matching_s},
                              {"propagation", result.timings.propagation_s},
                              {"upsample", result.timings.upsample_s}};
            write_text(*args.manifest, m.dump(2) + "\n");
        }
        return static_cast<int>(kOk);
    });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    if (args.pred.size() != args.gt.size() || args.pred.empty()) {
        err << "config error: --pred and --gt need the same, non-zero number of files\n";
        return kConfigError;
    }
    const std::size_t n = args.pred.size();
    struct PairOutcome {
        std::optional<EvalReport> report;
        std::string error;
    };
    std::vector<PairOutcome> outcomes(n);
    EvalOptions opts;
    opts.max_gt_magnitude = args.max_flow;

    const auto t0 = clock::now();
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        PairOutcome& o = outcomes[static_cast<std::size_t>(i)];
        try {
            const FlowField pred = read_flow(args.pred[static_cast<std::size_t>(i)]);
            const FlowField gt = read_flow(args.gt[static_cast<std::size_t>(i)]);
            o.report = epe(pred, gt, opts);
        } catch (const FormatError& e) {
            o.error = e.what();
        } catch (const Error& e) {
            o.error = e.what();
        }
    }
    const double eval_s = since(t0);

    json m;
    m["command"] = "eval";
    m["config"] = {{"max_flow", optional_number(args.max_flow)}};
    json inputs = json::array();
    for (std::size_t i = 0; i < n; ++i) inputs.push_back({{"pred", args.pred[i]}, {"gt", args.gt[i]}});
    m["inputs"] = inputs;
    m["weights_digest"] = nullptr;

    std::vector<EvalReport> ok;
    json pairs = json::array();
    print_header(out);
    for (std::size_t i = 0; i < n; ++i) {
        json p{{"pred", args.pred[i]}, {"gt", args.gt[i]}};
        if (outcomes[i].report) {
            p["status"] = "ok";
            p["metrics"] = report_json(*outcomes[i].report);
            ok.push_back(*outcomes[i].report);
            print_row(out, std::filesystem::path(args.pred[i]).filename().string(), *outcomes[i].report);
        } else {
            p["status"] = "skipped";
            p["error"] = outcomes[i].error;
            err << "skipped " << args.pred[i] << ": " << outcomes[i].error << "\n";
        }
        pairs.push_back(p);
    }
    m["pairs"] = pairs;

    if (ok.empty()) {
        m["aggregate"] = nullptr;
    } else {
        const EvalReport agg = aggregate(ok);
        m["aggregate"] = report_json(agg);
        print_row(out, "aggregate", agg);
    }
    m["timings_s"] = {{"evaluate", eval_s}};

    try {
        if (args.manifest) write_text(*args.manifest, m.dump(2) + "\n");
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return kFormatError;
    }
    if (ok.empty()) return kNoData;
    return kOk;
}

int cmd_selftest(const SelftestArgs& args, std::ostream& out, std::ostream& err) {
    std::vector<SuiteResult> results;
    try {
        results = run_selftest(args);
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    }
    bool all = true;
    for (const SuiteResult& r : results) {
        out << std::left << std::setw(22) << r.name << (r.passed ? "PASS  " : "FAIL  ") << r.detail << "\n";
        all = all && r.passed;
    }
    if (!all) {
        for (const SuiteResult& r : results) {
            if (!r.passed) err << "selftest failed: " << r.name << "\n";
        }
    }
    return all ? kOk : kSelftestFailed;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Single-pass global-matching optical flow engine"};
    app.require_subcommand(1);

    InferArgs infer_args;
    auto* infer_cmd = app.add_subcommand("infer", "Estimate flow for one FTX frame-pair directory");
    infer_cmd->add_option("--pair", infer_args.pair_dir, "Directory with dino_{1,2}.ftx and depth_{1,2}.ftx")->required();
    infer_cmd->add_option("--weights", infer_args.weights, "FMW1 model-weight file")->required();
    infer_cmd->add_option("--config", infer_args.config, "key = value pipeline config")->required();
    infer_cmd->add_option("--out", infer_args.out, "Output .flo path")->required();
    infer_cmd->add_option("--viz", infer_args.viz, "Optional color-wheel PNG");
    infer_cmd->add_option("--max-mag", infer_args.max_mag, "Fixed visualization saturation magnitude (px)");
    infer_cmd->add_option("--manifest", infer_args.manifest, "Optional JSON run manifest");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Score predicted flow files against ground truth");
    eval_cmd->add_option("--pred", eval_args.pred, "Predicted .flo/.png files")->required();
    eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth .flo/.png files, same order")->required();
    eval_cmd->add_option("--manifest", eval_args.manifest, "Write the JSON run manifest here");
    eval_cmd->add_option("--max-flow", eval_args.max_flow, "Ignore pixels with |gt| >= this (px)");

    SelftestArgs self_args;
    auto* self_cmd = app.add_subcommand("selftest", "Run the built-in oracle and property suites");
    self_cmd->add_option("--filter", self_args.filter, "Run a single suite");

    SynthOptions synth;
    std::string synth_out, synth_mode = "onehot";
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic shifted FTX pair directory");
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--height", synth.h, "Grid height (cells)");
    synth_cmd->add_option("--width", synth.w, "Grid width (cells)");
    synth_cmd->add_option("--channels", synth.c, "Feature channels");
    synth_cmd->add_option("--dx", synth.dx, "Horizontal shift (cells)");
    synth_cmd->add_option("--dy", synth.dy, "Vertical shift (cells)");
    synth_cmd->add_option("--sharpness", synth.sharpness, "Correlation margin of the true match");
    synth_cmd->add_option("--mode", synth_mode, "onehot or random")->check(CLI::IsMember({"onehot", "random"}));
    synth_cmd->add_option("--seed", synth.seed, "RNG seed");

    std::string init_out, init_config;
    std::size_t init_semantic = 0, init_depth = 0;
    bool init_identity = false;
    auto* init_cmd = app.add_subcommand("init-weights", "Write a seeded or identity FMW1 weight file");
    init_cmd->add_option("--out", init_out, "Output weight file")->required();
    init_cmd->add_option("--config", init_config, "Pipeline config (feature_dim, interaction_blocks, seed)")->required();
    init_cmd->add_option("--semantic-channels", init_semantic, "Semantic feature channels")->required();
    init_cmd->add_option("--depth-channels", init_depth, "Depth feature channels")->required();
    init_cmd->add_flag("--identity", init_identity, "Pass semantic features through unchanged");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kConfigError;
    }

    parallel::configure_from_env();

    if (*infer_cmd) return cmd_infer(infer_args, out, err);
    if (*eval_cmd) return cmd_eval(eval_args, out, err);
    if (*self_cmd) return cmd_selftest(self_args, out, err);
    if (*synth_cmd) {
        return guarded(err, [&] {
            synth.mode = synth_mode == "random" ? SynthMode::Random : SynthMode::OneHot;
            save_bundle(synth_shifted_pair(synth), synth_out);
            out << "wrote synthetic pair to " << synth_out << "\n";
            return static_cast<int>(kOk);
        });
    }
    if (*init_cmd) {
        return guarded(err, [&] {
            const PipelineConfig cfg = load_config(init_config);
            ModelWeights w;
            if (init_identity) {
                if (cfg.interaction_blocks != 0 || cfg.feature_dim != init_semantic) {
                    throw ConfigError("--identity needs interaction_blocks = 0 and feature_dim = semantic channels");
                }
                w.fusion = FusionWeights::identity(init_semantic, init_depth);
            } else {
                w = ModelWeights::random(init_semantic, init_depth, cfg.feature_dim, cfg.interaction_blocks, cfg.seed);
            }
            save_weights(w, init_out);
            out << "wrote " << init_out << "\n";
            return static_cast<int>(kOk);
        });
    }
    return kConfigError;
}

}  // namespace flowmatch::harness
