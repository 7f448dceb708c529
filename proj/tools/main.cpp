#include "icumort/errors.hpp"
#include "icumort/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <cstdio>
#include <optional>

namespace {

using icumort::pipeline::RunConfig;

struct CommonOpts {
    std::string config_path;
    std::string dir;
    std::optional<std::uint64_t> seed;
};

RunConfig load_config(const CommonOpts& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig::from_json(icumort::json::object())
                                             : RunConfig::from_file(opts.config_path);
    if (!opts.dir.empty()) cfg.dir = opts.dir;
    if (opts.seed) {
        icumort::json j = cfg.to_json();
        j["seed"] = *opts.seed;
        cfg = RunConfig::from_json(j); // keeps derived seeds consistent
        if (!opts.dir.empty()) cfg.dir = opts.dir;
    }
    if (cfg.dir.empty()) {
        throw icumort::usage_error("a run directory is required (--dir or config 'dir')");
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Run configuration file (JSON)");
    cmd->add_option("--dir", opts.dir, "Run directory for inputs and artifacts");
    cmd->add_option("--seed", opts.seed, "Override the run seed");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ICU mortality prediction pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string variant = "combined";

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    add_common(synth, opts);
    CLI::App* ingest = app.add_subcommand("ingest", "Assemble qualifying ICU stays");
    add_common(ingest, opts);
    CLI::App* harmonize = app.add_subcommand("harmonize", "Build canonical hourly grids");
    add_common(harmonize, opts);
    CLI::App* featurize =
        app.add_subcommand("featurize", "Impute and extract model-ready feature blocks");
    add_common(featurize, opts);
    CLI::App* split = app.add_subcommand("split", "Stratified train/val/test split");
    add_common(split, opts);

    CLI::App* train = app.add_subcommand("train", "Train a model variant");
    add_common(train, opts);
    train->add_option("--variant", variant, "static | timevariant | combined");
    CLI::App* predict = app.add_subcommand("predict", "Score every stay with a checkpoint");
    add_common(predict, opts);
    predict->add_option("--variant", variant, "static | timevariant | combined");
    CLI::App* evaluate = app.add_subcommand("evaluate", "Metrics with bootstrap intervals");
    add_common(evaluate, opts);
    evaluate->add_option("--variant", variant, "static | timevariant | combined");
    CLI::App* audit = app.add_subcommand("audit", "Per-group bias audit");
    add_common(audit, opts);
    audit->add_option("--variant", variant, "static | timevariant | combined");
    CLI::App* report = app.add_subcommand("report", "Render the final report tables");
    add_common(report, opts);

    CLI::App* run = app.add_subcommand("run", "Full chain: synth through report");
    add_common(run, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const RunConfig cfg = load_config(opts);
        using namespace icumort::pipeline;
        if (synth->parsed()) cmd_synth(cfg);
        if (ingest->parsed()) cmd_ingest(cfg);
        if (harmonize->parsed()) cmd_harmonize(cfg);
        if (featurize->parsed()) cmd_featurize(cfg);
        if (split->parsed()) cmd_split(cfg);
        if (train->parsed()) cmd_train(cfg, variant);
        if (predict->parsed()) cmd_predict(cfg, variant);
        if (evaluate->parsed()) cmd_evaluate(cfg, variant);
        if (audit->parsed()) cmd_audit(cfg, variant);
        if (report->parsed()) cmd_report(cfg);
        if (run->parsed()) run_all(cfg, {"static", "timevariant", "combined"});
        return 0;
    } catch (const icumort::usage_error& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return 1;
    } catch (const icumort::config_error& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return 2;
    } catch (const icumort::data_error& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "internal error: {}\n", e.what());
        return 3;
    }
}
