#include "commands.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "cfgat/apg.hpp"
#include "cfgat/checkpoint.hpp"
#include "cfgat/config.hpp"
#include "cfgat/dataset.hpp"
#include "cfgat/errors.hpp"
#include "cfgat/evalbench.hpp"
#include "cfgat/feasible.hpp"
#include "cfgat/gat.hpp"
#include "cfgat/metrics.hpp"
#include "cfgat/training.hpp"

namespace cfgat::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kToolVersion = "1.0.0";

RadioConfig effective_config(const Common& c) {
    RadioConfig cfg = scenario_preset(c.scenario);
    if (!c.config_path.empty()) {
        std::ifstream is(c.config_path);
        if (!is) throw IoError("cannot read config " + c.config_path);
        json doc;
        try {
            doc = json::parse(is);
        } catch (const json::exception& e) {
            throw ConfigError("config " + c.config_path + ": " + e.what());
        }
        if (doc.contains("scenario")) cfg = scenario_preset(doc["scenario"].get<int>());
        cfg = apply_json(cfg, doc);
    }
    json patch = json::object();
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
        const std::string key = kv.substr(0, eq);
        json value;
        try {
            value = json::parse(kv.substr(eq + 1));
        } catch (const json::exception&) {
            throw ConfigError("override '" + kv + "' has a non-numeric value");
        }
        json* node = &patch;
        std::size_t start = 0;
        for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
            node = &(*node)[key.substr(start, dot - start)];
            if (!node->is_object()) *node = json::object();
        }
        (*node)[key.substr(start)] = value;
    }
    if (!patch.empty()) cfg = apply_json(cfg, patch);
    cfg.validate();
    return cfg;
}

void fresh_directory(const fs::path& out) {
    if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out)))
        throw IoError("output directory " + out.string() + " already exists and is not empty");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

std::string file_hash(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return hex64(fnv1a64(ss.str()));
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot open " + p.string() + " for writing");
    os.precision(17);
    return os;
}

struct Manifest {
    json doc;

    Manifest(const Common& c, const std::string& command, const RadioConfig& cfg) {
        std::string line;
        for (const auto& a : c.argv) line += (line.empty() ? "" : " ") + a;
        doc = {{"tool", "cfgat"},
               {"tool_version", kToolVersion},
               {"command", command},
               {"command_line", line},
               {"scenario", c.scenario},
               {"seed", c.seed},
               {"threads", c.threads},
               {"lambda", c.lambda},
               {"sigma_db", c.sigma},
               {"ablation", c.ablation},
               {"config", to_json(cfg)},
               {"config_hash", hex64(config_hash(cfg))},
               {"artifacts", json::array()},
               {"timing", json::object()}};
    }

    void artifact(const fs::path& p) { doc["artifacts"].push_back({{"path", p.filename().string()}, {"hash", file_hash(p)}}); }

    void write(const fs::path& out) const {
        auto os = open_out(out / "manifest.json");
        os << doc.dump(2) << '\n';
        if (!os) throw IoError("failed to write manifest");
    }
};

Precision parse_precision(const std::string& s, Precision fallback) {
    if (s.empty()) return fallback;
    return s == "f32" ? Precision::F32 : Precision::F64;
}

std::string report_tag(const Common& c, const RadioConfig& cfg) {
    return "s" + std::to_string(c.scenario) + "_" + hex64(config_hash(cfg));
}

void warn_hash(const Dataset& ds, const RadioConfig& cfg) {
    if (ds.header.config_hash != config_hash(cfg))
        std::cerr << "warning: dataset config hash " << hex64(ds.header.config_hash) << " differs from "
                  << hex64(config_hash(cfg)) << '\n';
}

void require_dataset_matches(const Dataset& ds, const RadioConfig& cfg) {
    if (ds.header.M != cfg.M || ds.header.K_max != cfg.K_max || ds.header.T_p != cfg.T_p)
        throw ShapeError("dataset (M=" + std::to_string(ds.header.M) + ", K_max=" + std::to_string(ds.header.K_max) +
                         ", T_p=" + std::to_string(ds.header.T_p) + ") does not match the config (M=" +
                         std::to_string(cfg.M) + ", K_max=" + std::to_string(cfg.K_max) +
                         ", T_p=" + std::to_string(cfg.T_p) + ")");
}

Checkpoint load_for(const fs::path& path, const Dataset& ds, const RadioConfig& cfg) {
    Checkpoint ck = load_checkpoint(path);
    check_compatible(ck, ds.header.M, ds.header.K_max, config_hash(cfg), &std::cerr);
    return ck;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int run_generate(const Common& c, const GenerateArgs& a) {
    const RadioConfig cfg = effective_config(c);
    fresh_directory(c.out);
    Manifest man(c, "generate", cfg);
    const auto t0 = std::chrono::steady_clock::now();
    Dataset ds = generate_dataset(cfg, a.count, c.seed, c.threads);
    const fs::path path = c.out / "dataset.bin";
    write_dataset(path, ds);
    man.doc["count"] = a.count;
    man.doc["dataset_hash"] = file_hash(path);
    man.artifact(path);
    man.doc["timing"]["wall_time_s"] = seconds_since(t0);
    man.write(c.out);
    std::cout << path.string() << ' ' << man.doc["dataset_hash"].get<std::string>() << '\n';
    return 0;
}

int run_train(const Common& c, const TrainArgs& a) {
    const RadioConfig cfg = effective_config(c);
    const Dataset ds = read_dataset(a.dataset);
    require_dataset_matches(ds, cfg);
    warn_hash(ds, cfg);
    GatParams p0 = a.checkpoint.empty() ? init_params(cfg.M, c.seed) : load_for(a.checkpoint, ds, cfg).params;
    TrainConfig tc;
    tc.lambda = c.lambda;
    tc.batch = a.batch;
    tc.learning_rate = a.learning_rate;
    tc.epochs = a.epochs;
    tc.precision = parse_precision(c.precision, Precision::F32);
    tc.ablation = c.ablation;
    tc.sigma_db = c.sigma;
    tc.threads = c.threads;
    tc.seed = c.seed;
    tc.k_sampling = cfg.K_min == cfg.K_max ? KSampling::Fixed : KSampling::Uniform;
    fresh_directory(c.out);
    Manifest man(c, "train", cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto progress = open_out(c.out / "train_progress.csv");
    TrainResult res = train(ds, p0, cfg, tc, &progress);
    const fs::path ckpt = c.out / "checkpoint.bin";
    save_checkpoint(ckpt, res.best, ds.header.K_max, config_hash(cfg));
    {
        auto log = open_out(c.out / "train_log.csv");
        res.write_csv(log);
    }
    man.doc["dataset"] = fs::absolute(a.dataset).string();
    man.doc["train"] = {{"epochs", tc.epochs},
                        {"batch", tc.batch},
                        {"learning_rate", tc.learning_rate},
                        {"beta1", tc.beta1},
                        {"beta2", tc.beta2},
                        {"adam_eps", tc.adam_eps},
                        {"shard", tc.shard},
                        {"precision", tc.precision == Precision::F32 ? "f32" : "f64"},
                        {"holdout_fraction", tc.holdout_fraction},
                        {"best_epoch", res.best_epoch},
                        {"init_holdout_min_se", res.init_holdout_min_se}};
    man.artifact(ckpt);
    man.artifact(c.out / "train_log.csv");
    man.doc["timing"]["wall_time_s"] = seconds_since(t0);
    man.write(c.out);
    return 0;
}

int run_eval(const Common& c, const EvalArgs& a) {
    const RadioConfig cfg = effective_config(c);
    const Dataset ds = read_dataset(a.dataset);
    require_dataset_matches(ds, cfg);
    warn_hash(ds, cfg);
    std::vector<Method> methods;
    std::optional<Checkpoint> ck;
    const Precision prec = parse_precision(c.precision, Precision::F64);
    std::stringstream list(a.methods);
    for (std::string name; std::getline(list, name, ',');) {
        if (name == "apg") {
            ApgOptions o;
            o.lambda = c.lambda;
            methods.push_back(apg_method(cfg, o));
        } else if (name == "gat" || name == "gat_ablation") {
            if (a.checkpoint.empty()) throw ConfigError("method '" + name + "' needs --checkpoint");
            if (!ck) ck = load_for(a.checkpoint, ds, cfg);
            const bool abl = name == "gat_ablation" || c.ablation;
            methods.push_back(gat_method(ck->params, cfg, ds.header.K_max, abl, prec, name));
        } else {
            throw ConfigError("unknown method '" + name + "'");
        }
    }
    fresh_directory(c.out);
    Manifest man(c, "eval", cfg);
    const auto t0 = std::chrono::steady_clock::now();
    EvalOptions eo;
    eo.sigma_db = c.sigma;
    eo.seed = c.seed;
    eo.threads = c.threads;
    EvalReport rep = evaluate_methods(ds.samples, methods, cfg, eo);
    const std::string tag = report_tag(c, cfg);
    const fs::path se = c.out / ("se_" + tag + ".csv");
    const fs::path summary = c.out / ("summary_" + tag + ".csv");
    {
        auto os = open_out(se);
        rep.write_se_csv(os);
        auto ss = open_out(summary);
        rep.write_summary_csv(ss);
    }
    man.doc["dataset"] = fs::absolute(a.dataset).string();
    if (!a.checkpoint.empty()) man.doc["checkpoint"] = fs::absolute(a.checkpoint).string();
    for (const auto& m : rep.methods) man.doc["mean_min_se"][m.name] = m.mean_min_se;
    man.artifact(se);
    man.artifact(summary);
    man.doc["timing"]["wall_time_s"] = seconds_since(t0);
    man.write(c.out);
    std::ifstream in(summary);
    std::cout << in.rdbuf();
    return 0;
}

int run_apg(const Common& c, const ApgArgs& a) {
    const RadioConfig cfg = effective_config(c);
    const Dataset ds = read_dataset(a.dataset);
    require_dataset_matches(ds, cfg);
    warn_hash(ds, cfg);
    ApgOptions opts;
    opts.lambda = c.lambda;
    opts.max_iters = a.max_iters;
    fresh_directory(c.out);
    Manifest man(c, "apg", cfg);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ApgResult> res(ds.samples.size());
    parallel_for(ds.samples.size(), c.threads, [&](std::size_t i) {
        res[i] = apg_solve(ds.samples[i], compute_stats(ds.samples[i], cfg), cfg, opts);
    });
    const fs::path traces = c.out / "traces.csv";
    {
        auto os = open_out(traces);
        for (std::size_t i = 0; i < res.size(); ++i) res[i].trace.write_csv(os, static_cast<long>(i), i == 0);
    }
    {
        auto os = open_out(c.out / "powers.csv");
        os << "sample,ap,ue,mu\n";
        for (std::size_t i = 0; i < res.size(); ++i) {
            const Mat& mu = res[i].power.mu;
            for (std::size_t m = 0; m < mu.rows(); ++m)
                for (std::size_t k = 0; k < mu.cols(); ++k) os << i << ',' << m << ',' << k << ',' << mu(m, k) << '\n';
        }
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < res.size(); ++i) {
        const auto& s = ds.samples[i];
        mean += min_se(evaluate_se(res[i].power.mu, compute_stats(s, cfg), cfg, s.K_act), s.K_act);
    }
    man.doc["dataset"] = fs::absolute(a.dataset).string();
    man.doc["mean_min_se"] = mean / static_cast<double>(res.size());
    man.artifact(c.out / "powers.csv");
    man.artifact(traces);
    man.doc["timing"]["wall_time_s"] = seconds_since(t0);
    man.write(c.out);
    return 0;
}

int run_bench(const Common& c, const BenchArgs& a) {
    const RadioConfig cfg = effective_config(c);
    const Dataset ds = read_dataset(a.dataset);
    require_dataset_matches(ds, cfg);
    std::vector<ScenarioSample> subset(ds.samples.begin(),
                                       ds.samples.begin() + static_cast<std::ptrdiff_t>(
                                                                std::min<std::uint64_t>(a.limit, ds.samples.size())));
    ApgOptions o;
    o.lambda = c.lambda;
    std::vector<Method> methods{apg_method(cfg, o)};
    const Precision prec = parse_precision(c.precision, Precision::F32);
    GatParams params = a.checkpoint.empty() ? init_params(cfg.M, c.seed) : load_for(a.checkpoint, ds, cfg).params;
    methods.push_back(gat_method(params, cfg, ds.header.K_max, c.ablation, prec, "gat"));
    fresh_directory(c.out);
    Manifest man(c, "bench", cfg);
    BenchReport rep = runtime_bench(methods, subset, a.repeats);
    const fs::path csv = c.out / ("bench_" + report_tag(c, cfg) + ".csv");
    {
        auto os = open_out(csv);
        rep.write_csv(os);
    }
    man.doc["dataset"] = fs::absolute(a.dataset).string();
    man.doc["timing"]["environment"] = rep.environment;
    for (const auto& r : rep.rows) man.doc["timing"][r.method + "_median_s"] = r.median_s;
    man.doc["artifacts"].push_back({{"path", csv.filename().string()}, {"hash", "timing"}});
    man.write(c.out);
    std::ifstream in(csv);
    std::cout << in.rdbuf();
    return 0;
}

int run_validate(const Common& c, const ValidateArgs& a) {
    RadioConfig cfg = effective_config(c);
    fresh_directory(c.out);
    Manifest man(c, "validate", cfg);
    const auto t0 = std::chrono::steady_clock::now();

    // small contaminated instance: M = 4, N = 2, K = 6, T_p = 4
    RadioConfig small = cfg;
    small.M = 4;
    small.N = 2;
    small.K_max = small.K_min = 6;
    small.T_p = 4;
    small.validate();
    Rng gen = sample_stream(c.seed, 0);
    ScenarioSample s = generate_scenario(small, 6, gen);
    Rng mc = sample_stream(c.seed, 1);
    MonteCarloReport rep = monte_carlo_channel_stats(s, small, a.trials, mc);
    const fs::path mc_csv = c.out / "monte_carlo.csv";
    {
        auto os = open_out(mc_csv);
        rep.write_csv(os);
    }

    // property suite on generated instances of the configured scenario
    json props = json::object();
    std::size_t infeasible = 0, sandwich = 0, idempotence = 0;
    const int instances = 20;
    for (int i = 0; i < instances; ++i) {
        ScenarioSample x = generate_indexed_sample(cfg, c.seed + 1, static_cast<std::uint64_t>(i));
        const SystemStats st = compute_stats(x, cfg);
        ApgOptions o;
        o.lambda = c.lambda;
        const Mat mu = apg_solve(x, st, cfg, o).power.mu;
        if (!is_feasible(mu, cfg.N, 0.0).feasible) ++infeasible;
        if (!(project(mu, cfg.N) == mu)) ++idempotence;
        const auto se = evaluate_se(mu, st, cfg, x.K_act);
        const double u = smoothed_utility(se, c.lambda, x.K_act), lo = min_se(se, x.K_act);
        if (!(u >= lo - 1e-12 && u <= lo + std::log(static_cast<double>(x.K_act)) / c.lambda + 1e-12)) ++sandwich;
    }
    props["instances"] = instances;
    props["infeasible_solver_outputs"] = infeasible;
    props["projection_not_idempotent"] = idempotence;
    props["sandwich_violations"] = sandwich;

    json report = {{"trials", rep.trials},
                   {"max_mean_square_rel_dev", rep.max_ms_rel_dev},
                   {"mean_square_within_2pct", rep.max_ms_rel_dev < 0.02},
                   {"max_cross_statistic_rel_dev", rep.max_cross_rel_dev},
                   {"max_normalized_mean_estimate", rep.max_mean_estimate},
                   {"properties", props}};
    const fs::path rpt = c.out / "validate_report.json";
    {
        auto os = open_out(rpt);
        os << report.dump(2) << '\n';
    }
    man.artifact(mc_csv);
    man.artifact(rpt);
    man.doc["timing"]["wall_time_s"] = seconds_since(t0);
    man.write(c.out);
    std::cout << report.dump(2) << '\n';
    return 0;
}

}  // namespace cfgat::cli
