#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cfgat/matrix.hpp"

namespace cfgat {

using Rng = std::mt19937_64;

/// Three-slope path loss. Far branch -L - 35 log10(d), middle branch
/// -L - 15 log10(d1) - 20 log10(d), flat below d0.
struct ThreeSlopeParams {
    double d0_km = 0.01;
    double d1_km = 0.05;
    double loss_db = 140.7;
};

struct RadioConstants {
    double bandwidth_hz = 20e6;
    double noise_figure_db = 9.0;
    double pilot_power_w = 0.1;
    double downlink_power_w = 0.2;
};

struct RadioConfig {
    int M = 16;
    int N = 4;
    int K_max = 8;
    int K_min = 8;
    int T_p = 18;
    int T_c = 200;
    double area_side_km = 0.4;
    double zeta_p = 0.0;  // linear, per pilot symbol
    double zeta_d = 0.0;  // linear, max downlink power per symbol
    double sigma_sh_db = 8.0;
    ThreeSlopeParams path_loss{};
    RadioConstants constants{};

    /// Throws ConfigError on the first violated invariant.
    void validate() const;
};

struct NormalizedPowers {
    double zeta_p;
    double zeta_d;
    double noise_power_w;
};

/// Thermal noise -174 dBm/Hz over the bandwidth, raised by the noise figure.
NormalizedPowers noise_normalized_powers(double bandwidth_hz, double noise_figure_db,
                                         double pilot_power_w, double downlink_power_w);

/// Defaults plus zeta_p/zeta_d derived from the radio constants.
RadioConfig default_radio_config();

/// Presets 1..5 with the coverage area, M, K_max, K_min of each scenario.
RadioConfig scenario_preset(int id);

/// Recomputes zeta_p and zeta_d from cfg.constants.
void refresh_normalized_powers(RadioConfig& cfg);

double path_loss_db(double d_km, const ThreeSlopeParams& p);

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct PilotAssignment {
    Mat phi;                       // k_act x k_act, |phi_i^H phi_j|
    std::vector<int> pilot_index;  // per UE, in [0, T_p)
};

/// First min(k_act, T_p) UEs get distinct pilots; the rest reuse a pilot
/// drawn uniformly from the T_p available.
PilotAssignment assign_pilots(int k_act, int T_p, Rng& rng);

/// Gram matrix of orthonormal pilots from an index list, zero-padded to k_max.
Mat pilot_gram(const std::vector<int>& pilot_index, int k_max);

struct ScenarioSample {
    int M = 0;
    int K_max = 0;
    int K_act = 0;
    Mat B;    // M x K_max, padded columns zero
    Mat Phi;  // K_max x K_max, padded rows/cols zero
    std::vector<Point> ap_positions;
    std::vector<Point> ue_positions;
    std::vector<int> pilot_index;
};

ScenarioSample generate_scenario(const RadioConfig& cfg, int k_act, Rng& rng);

/// Independent stream for (seed, index); generation order does not matter.
Rng sample_stream(std::uint64_t seed, std::uint64_t index);

/// K_act uniform on [K_min, K_max], then generate_scenario, from the
/// (seed, index) stream.
ScenarioSample generate_indexed_sample(const RadioConfig& cfg, std::uint64_t seed, std::uint64_t index);

/// Checks the structural invariants of a sample. Throws ShapeError.
void validate_sample(const ScenarioSample& s);

/// Per-UE activity indicator: the diagonal of the padded Phi.
std::vector<double> activity_mask(const ScenarioSample& s);

}  // namespace cfgat
