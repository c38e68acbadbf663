#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cfgat/scenario.hpp"

namespace cfgat {

nlohmann::json to_json(const RadioConfig& cfg);

/// Applies every key present in j on top of base. Unknown keys are a
/// ConfigError. When a radio constant changes and zeta_p / zeta_d are not
/// given explicitly, the normalized powers are recomputed.
RadioConfig apply_json(RadioConfig base, const nlohmann::json& j);

/// Reads a JSON config document. Optional key "scenario" (1..5) selects the
/// preset the remaining keys are applied to.
RadioConfig load_radio_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

/// Hash over the canonical (sorted-key) dump of the effective config.
std::uint64_t config_hash(const RadioConfig& cfg);

std::string hex64(std::uint64_t v);

}  // namespace cfgat
