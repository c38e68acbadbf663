#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "cfgat/scenario.hpp"

namespace cfgat {

struct DatasetHeader {
    int M = 0;
    int K_max = 0;
    int T_p = 0;
    std::uint64_t count = 0;
    std::uint64_t config_hash = 0;
};

/// Records keep B, Phi and K_act only; positions are not stored.
struct Dataset {
    DatasetHeader header;
    std::vector<ScenarioSample> samples;

    /// Index of the first held-out record (last `fraction` of the file).
    std::size_t holdout_begin(double fraction = 0.05) const;
};

/// Writes to `path`.partial and renames on success; a failed write leaves
/// only the .partial file behind.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);

/// Validates magic, version, record count and every record's structure.
Dataset read_dataset(const std::filesystem::path& path);

/// Sample i comes from the (seed, i) stream, so the result does not depend
/// on `threads`.
Dataset generate_dataset(const RadioConfig& cfg, std::uint64_t count, std::uint64_t seed, int threads = 1);

/// Runs fn(i) for i in [0, n) on up to `threads` workers with static chunks.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace cfgat
