#include "cfgat/scenario.hpp"

#include <cmath>
#include <string>

#include "cfgat/errors.hpp"

namespace cfgat {

void RadioConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid radio config: " + what); };
    if (M < 1) fail("M must be >= 1");
    if (N < 1) fail("N must be >= 1");
    if (K_min < 1 || K_min > K_max) fail("require 1 <= K_min <= K_max");
    if (T_p < 1 || T_p >= T_c) fail("require 1 <= T_p < T_c");
    if (!(zeta_p > 0.0)) fail("zeta_p must be > 0");
    if (!(zeta_d > 0.0)) fail("zeta_d must be > 0");
    if (!(area_side_km > 0.0)) fail("area_side_km must be > 0");
    if (!(sigma_sh_db >= 0.0)) fail("sigma_sh_db must be >= 0");
    if (!(path_loss.d0_km > 0.0 && path_loss.d0_km < path_loss.d1_km)) fail("require 0 < d0 < d1");
}

NormalizedPowers noise_normalized_powers(double bandwidth_hz, double noise_figure_db,
                                         double pilot_power_w, double downlink_power_w) {
    if (!(bandwidth_hz > 0 && pilot_power_w > 0 && downlink_power_w > 0)) {
        throw ConfigError("radio constants must be positive");
    }
    const double noise_dbm = -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db;
    const double noise_w = std::pow(10.0, (noise_dbm - 30.0) / 10.0);
    return {pilot_power_w / noise_w, downlink_power_w / noise_w, noise_w};
}

void refresh_normalized_powers(RadioConfig& cfg) {
    const auto p = noise_normalized_powers(cfg.constants.bandwidth_hz, cfg.constants.noise_figure_db,
                                           cfg.constants.pilot_power_w, cfg.constants.downlink_power_w);
    cfg.zeta_p = p.zeta_p;
    cfg.zeta_d = p.zeta_d;
}

RadioConfig default_radio_config() {
    RadioConfig cfg;
    refresh_normalized_powers(cfg);
    return cfg;
}

RadioConfig scenario_preset(int id) {
    struct Row {
        double area_km2;
        int M, K_max, K_min;
    };
    static constexpr Row rows[] = {
        {0.16, 16, 8, 8}, {0.32, 32, 20, 20}, {0.32, 32, 20, 10}, {0.32, 64, 40, 40}, {0.32, 64, 40, 20},
    };
    if (id < 1 || id > 5) throw ConfigError("unknown scenario preset " + std::to_string(id) + " (expected 1..5)");
    const Row& r = rows[id - 1];
    RadioConfig cfg = default_radio_config();
    cfg.M = r.M;
    cfg.K_max = r.K_max;
    cfg.K_min = r.K_min;
    cfg.area_side_km = std::sqrt(r.area_km2);
    return cfg;
}

double path_loss_db(double d_km, const ThreeSlopeParams& p) {
    const double d = std::max(d_km, p.d0_km);
    if (d > p.d1_km) return -p.loss_db - 35.0 * std::log10(d);
    return -p.loss_db - 15.0 * std::log10(p.d1_km) - 20.0 * std::log10(d);
}

PilotAssignment assign_pilots(int k_act, int T_p, Rng& rng) {
    PilotAssignment out;
    out.pilot_index.resize(static_cast<std::size_t>(k_act));
    std::uniform_int_distribution<int> pick(0, T_p - 1);
    for (int k = 0; k < k_act; ++k) out.pilot_index[k] = k < T_p ? k : pick(rng);
    out.phi = pilot_gram(out.pilot_index, k_act);
    return out;
}

Mat pilot_gram(const std::vector<int>& pilot_index, int k_max) {
    const auto k_act = static_cast<int>(pilot_index.size());
    if (k_act > k_max) throw ShapeError("pilot_gram: more UEs than K_max");
    Mat phi(static_cast<std::size_t>(k_max), static_cast<std::size_t>(k_max));
    for (int i = 0; i < k_act; ++i) {
        for (int j = 0; j < k_act; ++j) phi(i, j) = pilot_index[i] == pilot_index[j] ? 1.0 : 0.0;
    }
    return phi;
}

ScenarioSample generate_scenario(const RadioConfig& cfg, int k_act, Rng& rng) {
    cfg.validate();
    if (k_act < cfg.K_min || k_act > cfg.K_max) {
        throw ConfigError("k_act " + std::to_string(k_act) + " outside [K_min, K_max] = [" +
                          std::to_string(cfg.K_min) + ", " + std::to_string(cfg.K_max) + "]");
    }
    ScenarioSample s;
    s.M = cfg.M;
    s.K_max = cfg.K_max;
    s.K_act = k_act;
    std::uniform_real_distribution<double> coord(0.0, cfg.area_side_km);
    s.ap_positions.resize(static_cast<std::size_t>(cfg.M));
    for (auto& p : s.ap_positions) {
        p.x = coord(rng);
        p.y = coord(rng);
    }
    s.ue_positions.resize(static_cast<std::size_t>(k_act));
    for (auto& p : s.ue_positions) {
        p.x = coord(rng);
        p.y = coord(rng);
    }

    std::normal_distribution<double> shadow(0.0, cfg.sigma_sh_db);
    s.B = Mat(static_cast<std::size_t>(cfg.M), static_cast<std::size_t>(cfg.K_max));
    for (int m = 0; m < cfg.M; ++m) {
        for (int k = 0; k < k_act; ++k) {
            const double d = std::hypot(s.ap_positions[m].x - s.ue_positions[k].x,
                                        s.ap_positions[m].y - s.ue_positions[k].y);
            double db = path_loss_db(d, cfg.path_loss);
            if (d > cfg.path_loss.d1_km && cfg.sigma_sh_db > 0.0) db += shadow(rng);
            s.B(m, k) = std::pow(10.0, db / 10.0);
        }
    }

    auto pilots = assign_pilots(k_act, cfg.T_p, rng);
    s.pilot_index = std::move(pilots.pilot_index);
    s.Phi = pilot_gram(s.pilot_index, cfg.K_max);
    return s;
}

Rng sample_stream(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 over (seed, index) feeding a seed_seq.
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    };
    const std::uint64_t a = mix(seed);
    const std::uint64_t b = mix(a ^ mix(index + 0x632BE59BD9B4E019ull));
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return Rng(seq);
}

ScenarioSample generate_indexed_sample(const RadioConfig& cfg, std::uint64_t seed, std::uint64_t index) {
    Rng rng = sample_stream(seed, index);
    int k_act = cfg.K_max;
    if (cfg.K_min < cfg.K_max) k_act = std::uniform_int_distribution<int>(cfg.K_min, cfg.K_max)(rng);
    return generate_scenario(cfg, k_act, rng);
}

void validate_sample(const ScenarioSample& s) {
    auto fail = [](const std::string& what) { throw ShapeError("invalid scenario sample: " + what); };
    const auto M = static_cast<std::size_t>(s.M);
    const auto K = static_cast<std::size_t>(s.K_max);
    if (s.B.rows() != M || s.B.cols() != K) fail("B shape " + shape_str(s.B));
    if (s.Phi.rows() != K || s.Phi.cols() != K) fail("Phi shape " + shape_str(s.Phi));
    if (s.K_act < 1 || s.K_act > s.K_max) fail("K_act out of range");
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const double b = s.B(m, k);
            const bool active = k < static_cast<std::size_t>(s.K_act);
            if (!std::isfinite(b) || b < 0.0) fail("B entry not finite and >= 0");
            if (!active && b != 0.0) fail("padded B column not zero");
            if (active && b <= 0.0) fail("active B entry not positive");
        }
    }
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            const double v = s.Phi(i, j);
            const bool active = i < static_cast<std::size_t>(s.K_act) && j < static_cast<std::size_t>(s.K_act);
            if (v != s.Phi(j, i)) fail("Phi not symmetric");
            if (!active && v != 0.0) fail("padded Phi entry not zero");
            if (active && i == j && v != 1.0) fail("active Phi diagonal not 1");
            if (active && v != 0.0 && v != 1.0) fail("Phi entry not in {0,1}");
        }
    }
}

std::vector<double> activity_mask(const ScenarioSample& s) {
    std::vector<double> mask(static_cast<std::size_t>(s.K_max));
    for (int k = 0; k < s.K_max; ++k) mask[k] = s.Phi(k, k);
    return mask;
}

}  // namespace cfgat
