#ifndef PHASEID_MMLE_HPP
#define PHASEID_MMLE_HPP

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phaseid/connection.hpp"
#include "phaseid/slsq.hpp"

namespace phaseid {

// Result of minimizing load m's marginal objective: the best of the three
// pinned-phase subproblems, with the rounded assignment that produced it.
struct LoadSolution {
  int m = 0;
  int chosen_phase = 0;
  PhaseAssignment assignment;              // full M-load assignment
  double objective = 0.0;                  // f_m at the chosen candidate
  std::array<double, 3> phase_objectives{};  // f_m per pinned phase
  std::array<long, 3> iterations{};
  std::array<double, 3> kkt{};
};

LoadSolution solve_load(int m, const DifferencedSeries& ds,
                        std::span<const ReducedSensitivity> sens, const SolveOptions& opts = {});

// Per-load vote tallies over all M per-load solutions; tallies[k][j] counts
// solutions whose assignment put load k on phase j.
std::vector<std::array<int, 3>> tally_votes(std::span<const LoadSolution> solutions);

// Each load takes its own solution's decision.
PhaseAssignment aggregate_target_only(std::span<const LoadSolution> solutions);

// Majority vote per load; ties fall back to the target-only decision, and
// three-phase loads always keep it.
PhaseAssignment aggregate_voting(std::span<const LoadSolution> solutions,
                                 std::span<const LoadMeta> loads);

struct IdentifyOptions {
  SolveOptions solver;
  int jobs = 1;
  enum class Diagnostics { None, Summary, Full } diagnostics = Diagnostics::Summary;
};

struct LoadReport {
  std::string id;
  PhaseClass cls = PhaseClass::Single;
  int phase = 0;
  std::array<int, 3> votes{};
  double f_m = 0.0;
  // summary diagnostics (filled unless diagnostics == None)
  double residual_mean = 0.0;
  double residual_std = 0.0;
};

struct IdentificationReport {
  std::string method;  // "target-only" or "voting"
  PhaseAssignment assignment;
  std::vector<LoadReport> loads;
  double sum_f_target_only = 0.0;
  double sum_f_voting = 0.0;
  std::optional<double> accuracy;
  std::vector<LoadSolution> solutions;  // kept for diagnostics/inspection
};

// Picks whichever aggregate has the lower summed marginal objective,
// target-only on ties.
IdentificationReport select_final(const PhaseAssignment& target_only, const PhaseAssignment& voting,
                                  const DifferencedSeries& ds,
                                  std::span<const ReducedSensitivity> sens);

// Full pipeline on a prepared measurement set: sensitivities per model,
// per-load subproblems, aggregation, final selection. Deterministic.
IdentificationReport identify(std::span<const ReducedNetwork> nets, const MeasurementSet& ms,
                              const IdentifyOptions& opts = {});
IdentificationReport identify(const ReducedNetwork& net, const MeasurementSet& ms,
                              const IdentifyOptions& opts = {});

// Report serialization; accuracy is included when truth was attached.
std::string report_to_json(const IdentificationReport& report, int indent = 2);

// Fills report.accuracy from a truth sidecar (throws on unknown loads).
void attach_accuracy(IdentificationReport& report, const std::vector<std::pair<std::string, std::string>>& truth);

}  // namespace phaseid

#endif
