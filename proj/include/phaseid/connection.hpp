#ifndef PHASEID_CONNECTION_HPP
#define PHASEID_CONNECTION_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "phaseid/feeder.hpp"
#include "phaseid/types.hpp"

namespace phaseid {

// One-hot phase decision per load, stored as the chosen index 0..2.
// Interpretation depends on the load class (A/B/C or AB/BC/CA).
struct PhaseAssignment {
  std::vector<int> phase;

  int size() const { return static_cast<int>(phase.size()); }
  // Row/column of load m's active entry in the 3M-sized triple layout.
  int slot(int m) const { return 3 * m + phase[m]; }
};

// Split of a delta-connected load's power onto its two phases. For power
// P + jQ across pair (i, j):
//   S_i = (P/2 + sqrt(3) Q/6) + j (Q/2 - sqrt(3) P/6)
//   S_j = S - S_i
// The second component is computed as the remainder so the pair sums back to
// the input exactly.
std::pair<Complex, Complex> split_delta_power(double p, double q);

// Linearized line-to-line voltage magnitude deviation between phases i and j
// of one node, given per-phase magnitude and angle deviations from the
// reference point (v0, theta0 at 120 degree spacing):
//   dv_ij ~ (sqrt(3)/2)(dv_i + dv_j) + (1/2)(dtheta_i - dtheta_j)
double line_to_line_delta(double dv_i, double dv_j, double dtheta_i, double dtheta_j);

// Exact pair magnitude from per-phase magnitudes and the angle between them.
double line_to_line_exact(double v_i, double v_j, double theta_ij);

struct LoadMeta {
  std::string id;
  PhaseClass cls = PhaseClass::Single;
  int node = 0;
  bool secondary = false;
};

LoadMeta to_meta(const ReducedLoad& load);

// Class-dependent coupling blocks between load triples and node triples.
// U1/U2 map node voltage/angle deviations into candidate load measurements,
// Uh1/Uh2 map candidate load injections into node injections. Sizes are
// 3M x 3N and 3N x 3M; blocks for non-hosting nodes are zero.
struct BlockTables {
  Mat U1, U2, Uh1, Uh2;
};

BlockTables build_block_tables(std::span<const LoadMeta> loads, int node_count);

// Load-triple sensitivities, 3M x 3M:
//   Kh = (U1 K + U2 K_ang) Uh1 + (U1 L + U2 L_ang) Uh2
//   Lh = (U1 K + U2 K_ang) Uh2 - (U1 L + U2 L_ang) Uh1
// Built from node-ordered sensitivity matrices.
struct ReducedSensitivity {
  Mat Kh, Lh;
};

struct SensitivityMatrices;  // linear_pf.hpp
ReducedSensitivity build_reduced_sensitivity(const BlockTables& bt, const Mat& K_node,
                                             const Mat& L_node, const Mat& K_ang_node,
                                             const Mat& L_ang_node);

// Node-level injections implied by load measurements under an assignment:
//   p_node = Uh1 X' p + Uh2 X' q,  q_node = -Uh2 X' p + Uh1 X' q
// where X' scatters load powers into the active triple slots.
std::pair<Vec, Vec> map_injections(const PhaseAssignment& x, const Vec& p, const Vec& q,
                                   const BlockTables& bt);

// Substation reference channels, in the fixed column order used throughout.
enum RefChannel { RefA = 0, RefB = 1, RefC = 2, RefAB = 3, RefBC = 4, RefCA = 5 };

// Which reference channel load m with decision i reads.
inline int ref_channel(PhaseClass cls, int i) { return cls == PhaseClass::Two ? 3 + i : i; }

// Aligned per-unit measurement series on the reduced network. Branch loads
// have already been mapped to their primary-node equivalents. Segments are
// runs without time gaps; sums never cross a segment boundary. model_index
// selects the sensitivity model of the segment (topology changes rebuild the
// model mid-series; a plain feeder uses index 0 everywhere).
struct MeasurementSegment {
  std::vector<std::int64_t> times;
  Mat v, p, q;  // samples x M
  Mat ref;      // samples x 6, columns per RefChannel
  int model_index = 0;
};

struct MeasurementSet {
  std::vector<LoadMeta> loads;
  std::vector<MeasurementSegment> segments;

  int load_count() const { return static_cast<int>(loads.size()); }
  int sample_count() const;
};

// First differences of every channel, per segment.
struct DiffSegment {
  Mat dv, dp, dq;  // (samples-1) x M
  Mat dref;        // (samples-1) x 6
  int model_index = 0;
};

struct DifferencedSeries {
  std::vector<LoadMeta> loads;
  std::vector<DiffSegment> segments;

  int load_count() const { return static_cast<int>(loads.size()); }
  int row_count() const;
};

DifferencedSeries difference_series(const MeasurementSet& ms);

// Model-predicted differenced measurement vector for row t (global row index
// across segments) under assignment x. sens holds one entry per model index.
Vec model_voltage_delta(int t, const PhaseAssignment& x, const DifferencedSeries& ds,
                        std::span<const ReducedSensitivity> sens);

// Marginal objective of load m: mean squared difference between its measured
// and predicted differenced voltage over all rows. This is the canonical
// evaluation path; candidate scoring and reports all go through it.
double evaluate_marginal_objective(int m, const PhaseAssignment& x, const DifferencedSeries& ds,
                                   std::span<const ReducedSensitivity> sens);

// All marginal objectives at once, evaluated with dense matrix products.
// Same model as evaluate_marginal_objective, faster when every load is
// needed (bulk scoring of whole assignments).
Vec marginal_objectives(const PhaseAssignment& x, const DifferencedSeries& ds,
                        std::span<const ReducedSensitivity> sens);

}  // namespace phaseid

#endif
