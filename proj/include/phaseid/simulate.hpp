#ifndef PHASEID_SIMULATE_HPP
#define PHASEID_SIMULATE_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "phaseid/connection.hpp"
#include "phaseid/feeder.hpp"
#include "phaseid/measurements.hpp"

namespace phaseid {

struct SimulationSpec {
  enum class Mode { Linear, Nonlinear } mode = Mode::Linear;

  // True phase of every load, in feeder load order.
  PhaseAssignment truth;

  int samples = 2160;                     // raw samples; differencing drops one
  std::int64_t start_time = 1704067200;   // 2024-01-01T00:00:00Z
  std::int64_t step_seconds = 3600;

  // Meter error: zero-mean Gaussian, three-sigma = noise_class * nominal
  // (1 pu for voltage channels, per-load mean |S| for powers). Sample
  // placement draws independent errors per reading; Cumulative accumulates
  // them so the differenced series sees white noise.
  double noise_class = 0.0;
  enum class NoisePlacement { Sample, Cumulative } noise_placement = NoisePlacement::Sample;

  bool quantize = false;
  double quant_v_primary = 1.0;    // volts
  double quant_v_secondary = 0.1;  // volts, loads behind service branches
  double quant_pq = 0.1;           // kW / kvar

  double penetration = 1.0;        // fraction of loads that keep their meter

  std::uint64_t seed = 12345;

  // Synthetic profile shape (per unit). Loads consume: injections negative.
  double load_scale = 0.05;        // mean |P| per load
  double fluct_sigma = 0.30;       // stationary std of the AR(1) multiplier
  double fluct_rho = 0.85;
  double daily_amplitude = 0.25;
  double substation_sigma = 1e-4;  // per-step random walk of source magnitudes

  std::string profiles_csv;        // optional real-power profiles (kW), wide format
};

// Real power from the CSV or the seeded generator; reactive power from
// per-sample power factors drawn uniformly in [0.9, 1], lagging.
struct ProfileSet {
  Mat p, q;  // T x M, per unit injections
};

ProfileSet synthesize_profiles(const SimulationSpec& spec, int load_count);

struct SimulationResult {
  RawMeasurements raw;
  TruthMap truth;
};

// Generates raw meter streams for the feeder. Linear mode drives the
// linearized model with the profiles as primary-equivalent injections and
// reconstructs branch meters through the inverse reduction; nonlinear mode
// solves the full network, service branches and delta loads included, and
// reads exact magnitudes at the meters. Noise, quantization and dropout are
// applied to the raw streams in that order.
SimulationResult generate(const SimulationSpec& spec, const FeederModel& model);

struct PerturbationSpec {
  double fraction = 0.0;                    // three-sigma of the per-entry factor
  std::vector<std::string> missing_branches;  // branch ids the model loses
  std::uint64_t seed = 12345;
};

// Model-error injection for robustness studies: every line admittance entry
// is scaled by (1 + eps), symmetric pairs together, and the listed branches'
// reduction transforms are dropped. Singular perturbed blocks are resampled.
ReducedNetwork perturb_model(const ReducedNetwork& net, const PerturbationSpec& spec);

// Deterministic dropout: keeps ceil(penetration * M) loads, chosen by seed.
std::vector<std::string> select_metered_loads(const std::vector<std::string>& ids,
                                              double penetration, std::uint64_t seed);

}  // namespace phaseid

#endif
