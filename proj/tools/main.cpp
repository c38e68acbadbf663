#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "cfgat/errors.hpp"
#include "commands.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitShape = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

void add_common(CLI::App* sub, cfgat::cli::Common& c) {
    sub->add_option("--scenario", c.scenario, "Scenario preset 1..5")->check(CLI::Range(1, 5));
    sub->add_option("--config", c.config_path, "JSON config applied on top of the preset");
    sub->add_option("--set", c.overrides, "Field override key=value (dotted keys for nested fields)");
    sub->add_option("--seed", c.seed, "Master seed");
    sub->add_option("--out", c.out, "Fresh output directory")->required();
    sub->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--precision", c.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--lambda", c.lambda, "Smoothing parameter")->check(CLI::PositiveNumber);
    sub->add_option("--sigma", c.sigma, "Large-scale estimation error std in dB")->check(CLI::NonNegativeNumber);
    sub->add_flag("--ablation", c.ablation, "Zero every pilot-transform output");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pilot-contamination-aware power control for cell-free massive MIMO"};
    app.require_subcommand(1);
    cfgat::cli::Common common;
    for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);

    cfgat::cli::GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Generate a dataset");
    add_common(g, common);
    g->add_option("--count", gen.count, "Number of samples")->check(CLI::PositiveNumber);

    cfgat::cli::TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the network on a dataset");
    add_common(t, common);
    t->add_option("--dataset", tr.dataset)->required();
    t->add_option("--checkpoint", tr.checkpoint, "Warm-start checkpoint");
    t->add_option("--epochs", tr.epochs)->check(CLI::NonNegativeNumber);
    t->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
    t->add_option("--lr", tr.learning_rate)->check(CLI::PositiveNumber);

    cfgat::cli::EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate methods on a dataset");
    add_common(e, common);
    e->add_option("--dataset", ev.dataset)->required();
    e->add_option("--checkpoint", ev.checkpoint);
    e->add_option("--methods", ev.methods, "Comma list of apg, gat, gat_ablation");

    cfgat::cli::ApgArgs ap;
    auto* a = app.add_subcommand("apg", "Solve every sample of a dataset with APG");
    add_common(a, common);
    a->add_option("--dataset", ap.dataset)->required();
    a->add_option("--max-iters", ap.max_iters)->check(CLI::PositiveNumber);

    cfgat::cli::BenchArgs be;
    auto* b = app.add_subcommand("bench", "Per-sample runtime of APG and the network");
    add_common(b, common);
    b->add_option("--dataset", be.dataset)->required();
    b->add_option("--checkpoint", be.checkpoint);
    b->add_option("--repeats", be.repeats)->check(CLI::Range(3, 1000));
    b->add_option("--limit", be.limit, "Samples to time")->check(CLI::PositiveNumber);

    cfgat::cli::ValidateArgs va;
    auto* v = app.add_subcommand("validate", "Monte-Carlo channel statistics and property checks");
    add_common(v, common);
    v->add_option("--trials", va.trials)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*g) return cfgat::cli::run_generate(common, gen);
        if (*t) return cfgat::cli::run_train(common, tr);
        if (*e) return cfgat::cli::run_eval(common, ev);
        if (*a) return cfgat::cli::run_apg(common, ap);
        if (*b) return cfgat::cli::run_bench(common, be);
        if (*v) return cfgat::cli::run_validate(common, va);
    } catch (const cfgat::ConfigError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kExitConfig;
    } catch (const cfgat::ShapeError& err) {
        std::cerr << "shape error: " << err.what() << '\n';
        return kExitShape;
    } catch (const cfgat::NumericError& err) {
        std::cerr << "numeric error: " << err.what() << '\n';
        return kExitNumeric;
    } catch (const cfgat::IoError& err) {
        std::cerr << "i/o error: " << err.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& err) {
        std::cerr << "i/o error: " << err.what() << '\n';
        return kExitIo;
    }
    return kExitConfig;
}
