#include "cfgat/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cfgat/errors.hpp"

namespace cfgat {

using nlohmann::json;

json to_json(const RadioConfig& cfg) {
    return json{
        {"M", cfg.M},
        {"N", cfg.N},
        {"K_max", cfg.K_max},
        {"K_min", cfg.K_min},
        {"T_p", cfg.T_p},
        {"T_c", cfg.T_c},
        {"area_side_km", cfg.area_side_km},
        {"zeta_p", cfg.zeta_p},
        {"zeta_d", cfg.zeta_d},
        {"sigma_sh_db", cfg.sigma_sh_db},
        {"path_loss", {{"d0_km", cfg.path_loss.d0_km}, {"d1_km", cfg.path_loss.d1_km}, {"loss_db", cfg.path_loss.loss_db}}},
        {"constants",
         {{"bandwidth_hz", cfg.constants.bandwidth_hz},
          {"noise_figure_db", cfg.constants.noise_figure_db},
          {"pilot_power_w", cfg.constants.pilot_power_w},
          {"downlink_power_w", cfg.constants.downlink_power_w}}},
    };
}

namespace {

template <class T>
void take(const json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
    }
}

}  // namespace

RadioConfig apply_json(RadioConfig cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config document must be a JSON object");
    reject_unknown(j,
                   {"scenario", "M", "N", "K_max", "K_min", "T_p", "T_c", "area_side_km", "zeta_p", "zeta_d",
                    "sigma_sh_db", "path_loss", "constants"},
                   "");
    take(j, "M", cfg.M);
    take(j, "N", cfg.N);
    take(j, "K_max", cfg.K_max);
    take(j, "K_min", cfg.K_min);
    take(j, "T_p", cfg.T_p);
    take(j, "T_c", cfg.T_c);
    take(j, "area_side_km", cfg.area_side_km);
    take(j, "sigma_sh_db", cfg.sigma_sh_db);
    if (j.contains("path_loss")) {
        const auto& p = j["path_loss"];
        reject_unknown(p, {"d0_km", "d1_km", "loss_db"}, "path_loss.");
        take(p, "d0_km", cfg.path_loss.d0_km);
        take(p, "d1_km", cfg.path_loss.d1_km);
        take(p, "loss_db", cfg.path_loss.loss_db);
    }
    if (j.contains("constants")) {
        const auto& c = j["constants"];
        reject_unknown(c, {"bandwidth_hz", "noise_figure_db", "pilot_power_w", "downlink_power_w"}, "constants.");
        take(c, "bandwidth_hz", cfg.constants.bandwidth_hz);
        take(c, "noise_figure_db", cfg.constants.noise_figure_db);
        take(c, "pilot_power_w", cfg.constants.pilot_power_w);
        take(c, "downlink_power_w", cfg.constants.downlink_power_w);
        refresh_normalized_powers(cfg);
    }
    take(j, "zeta_p", cfg.zeta_p);
    take(j, "zeta_d", cfg.zeta_d);
    cfg.validate();
    return cfg;
}

RadioConfig load_radio_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    RadioConfig base = default_radio_config();
    if (j.contains("scenario")) base = scenario_preset(j["scenario"].get<int>());
    return apply_json(base, j);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t config_hash(const RadioConfig& cfg) { return fnv1a64(to_json(cfg).dump()); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace cfgat
