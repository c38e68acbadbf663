#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "cfgat/gat.hpp"

namespace cfgat {

/// Named-tensor container: header (magic, version, M, K_max, layer widths,
/// config hash), then (name, rows, cols, float64 payload) per tensor.
struct Checkpoint {
    GatParams params;
    int K_max = 0;
    std::uint64_t config_hash = 0;
    std::vector<int> widths;
};

void save_checkpoint(const std::filesystem::path& path, const GatParams& params, int K_max, std::uint64_t config_hash);

/// Throws IoError on a corrupt file and ShapeError when a tensor shape does
/// not match the layout implied by the header.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rejects an M, K_max or width mismatch with a ShapeError naming expected
/// and actual values. A config-hash mismatch only writes a warning to `warn`.
/// Returns false when the warning was emitted.
bool check_compatible(const Checkpoint& ckpt, int M, int K_max, std::uint64_t config_hash, std::ostream* warn);

}  // namespace cfgat
