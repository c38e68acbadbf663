#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cfgat::cli {

struct Common {
    int scenario = 1;
    std::string config_path;
    std::vector<std::string> overrides;  // key=value, dotted keys for nested fields
    std::uint64_t seed = 1;
    std::filesystem::path out;
    int threads = 1;
    std::string precision;  // empty: command default
    double lambda = 3.0;
    double sigma = 0.0;
    bool ablation = false;
    std::vector<std::string> argv;
};

struct GenerateArgs {
    std::uint64_t count = 1000;
};

struct TrainArgs {
    std::filesystem::path dataset;
    std::filesystem::path checkpoint;  // optional warm start
    int epochs = 30;
    int batch = 128;
    double learning_rate = 1e-3;
};

struct EvalArgs {
    std::filesystem::path dataset;
    std::filesystem::path checkpoint;
    std::string methods = "apg,gat";
};

struct ApgArgs {
    std::filesystem::path dataset;
    int max_iters = 300;
};

struct BenchArgs {
    std::filesystem::path dataset;
    std::filesystem::path checkpoint;
    int repeats = 5;
    std::uint64_t limit = 50;
};

struct ValidateArgs {
    long trials = 100000;
};

int run_generate(const Common& c, const GenerateArgs& a);
int run_train(const Common& c, const TrainArgs& a);
int run_eval(const Common& c, const EvalArgs& a);
int run_apg(const Common& c, const ApgArgs& a);
int run_bench(const Common& c, const BenchArgs& a);
int run_validate(const Common& c, const ValidateArgs& a);

}  // namespace cfgat::cli
