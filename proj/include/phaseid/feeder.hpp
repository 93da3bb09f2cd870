#ifndef PHASEID_FEEDER_HPP
#define PHASEID_FEEDER_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "phaseid/types.hpp"

namespace phaseid {

// Three-phase line section between two primary nodes. The impedance block is
// a full 3x3 complex matrix (self and mutual terms) in per unit.
struct LineSection {
  int from = 0;
  int to = 0;
  Eigen::Matrix3cd z;
};

// Service branch hanging off a primary node. "single" carries one phase to a
// line-to-neutral load, "two" carries two phases to a line-to-line load.
// Impedances are per unit after parsing.
struct ServiceBranch {
  std::string id;
  int node = 0;
  PhaseClass kind = PhaseClass::Single;  // Single or Two only
  Complex z1;             // kind == Single
  Eigen::Matrix2cd z2;    // kind == Two
};

struct Load {
  std::string id;
  PhaseClass cls = PhaseClass::Single;
  int node = -1;          // direct attachment, -1 when behind a branch
  int branch = -1;        // index into FeederModel::branches, -1 when direct
};

// Parsed feeder description. node_ids[0] is the substation; non-substation
// nodes are 1..N.
struct FeederModel {
  double base_voltage_v = 0.0;  // line-to-neutral volts
  double base_power_va = 0.0;   // single-phase VA base
  std::vector<std::string> node_ids;
  std::vector<LineSection> lines;
  std::vector<ServiceBranch> branches;
  std::vector<Load> loads;

  int node_count() const { return static_cast<int>(node_ids.size()) - 1; }  // N, excluding substation
  double z_base() const { return base_voltage_v * base_voltage_v / base_power_va; }
};

FeederModel parse_feeder(const std::string& json_text);
FeederModel parse_feeder_file(const std::string& path);

// Per-load transform that maps a raw meter sample taken at the end of a
// service branch to the equivalent sample at the hosting primary node:
//   v_eq = |v + z_signed |I| e^{-j phi}|,  S_eq = S + z_signed |I|^2
// with |I| = |S|/v and phi = arg S. For a single-phase branch z_signed = -z,
// for a two-phase branch z_signed = z12 + z21 - z11 - z22.
struct ReductionTransform {
  bool active = false;
  Complex z_signed;
  std::string branch_id;
};

struct ReducedLoad {
  std::string id;
  PhaseClass cls = PhaseClass::Single;
  int node = 0;             // hosting primary node, 1..N
  bool secondary = false;   // true when the load was reduced from a branch
  ReductionTransform transform;
};

// Feeder with all service branches folded into their hosting nodes. Only
// primary nodes and line sections remain; loads carry the per-sample
// measurement transform needed to undo the branch.
struct ReducedNetwork {
  double base_voltage_v = 0.0;
  double base_power_va = 0.0;
  std::vector<std::string> node_ids;
  std::vector<LineSection> lines;
  std::vector<ReducedLoad> loads;

  int node_count() const { return static_cast<int>(node_ids.size()) - 1; }
  double z_base() const { return base_voltage_v * base_voltage_v / base_power_va; }
};

ReducedNetwork reduce_network(const FeederModel& model);

// Depth-1 branch reductions applied to one sample. Inputs and outputs are in
// per unit; v is the measured voltage magnitude at the load (line-to-neutral
// for single, line-to-line for two-phase), S the measured complex injection.
std::pair<double, Complex> reduce_single_phase_branch(Complex z, Complex S, double v);
std::pair<double, Complex> reduce_two_phase_branch(const Eigen::Matrix2cd& z, Complex S, double v12);

// Shared kernel of the two reductions, keyed by the signed impedance.
std::pair<double, Complex> apply_reduction(Complex z_signed, Complex S, double v);
// Inverse of apply_reduction: recover the raw meter sample that reduces to
// (v_eq, S_eq). Fixed-point iteration; exact to roundoff for realistic z.
std::pair<double, Complex> invert_reduction(Complex z_signed, Complex S_eq, double v_eq);

// Phase-ordered bus admittance matrix of the primary network, size
// 3(N+1) x 3(N+1); entry block (i,j) couples phase i of every node with
// phase j. No shunt terms, so every row sums to zero and the rank is 3N.
struct AdmittanceMatrix {
  CMat Y;
  int node_count = 0;  // N
};

AdmittanceMatrix assemble_admittance(const ReducedNetwork& net);

}  // namespace phaseid

#endif
