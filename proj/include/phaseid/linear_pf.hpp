#ifndef PHASEID_LINEAR_PF_HPP
#define PHASEID_LINEAR_PF_HPP

#include <string>

#include "phaseid/feeder.hpp"
#include "phaseid/types.hpp"

namespace phaseid {

// Flat operating point: unit magnitudes, angles 0 / -120 / +120 degrees,
// phase-ordered over N+1 nodes.
Vec flat_voltage(int node_count);
Vec flat_angle(int node_count);

// Linearized power flow around the flat solution,
//   [p; q] = [A11 A12; A21 A22] [v - 1; theta - theta_flat]
// with A11 = -A22 = Re(Phi^-1 Y Phi) and A12 = A21 = -Im(Phi^-1 Y Phi),
// Phi = diag(I, a I, a^2 I), a = e^{-j 2pi/3}. The r* blocks are the same
// matrices with the substation row/column of each phase block removed.
struct SystemMatrices {
  Mat A11, A12, A21, A22;      // 3(N+1)
  Mat rA11, rA12, rA21, rA22;  // 3N, substation removed
  int node_count = 0;
  int rank = -1;               // numeric rank of the 6N x 6N reduced system
  std::string rank_diagnostic; // set when rank < 6N

  Mat reduced() const;         // stacks the r* blocks into 6N x 6N
  bool full_rank() const { return rank == 6 * node_count; }
};

SystemMatrices build_A(const AdmittanceMatrix& adm);

// Strips the substation row and column out of each phase block of a
// 3(N+1)-sized matrix, yielding the 3N-sized reduced block.
Mat remove_substation(const Mat& block, int node_count);

// Voltage-magnitude and angle sensitivities to injections, from one dense
// factorization of the reduced system:
//   v_dev = K p - L q,  theta_dev = K_ang p - L_ang q
// where v_dev/theta_dev are deviations from the substation values. Stored
// phase-ordered and node-ordered (node-major triples).
struct SensitivityMatrices {
  Mat K, L, K_ang, L_ang;                  // phase-ordered, 3N
  Mat K_node, L_node, K_ang_node, L_ang_node;  // node-ordered
  Eigen::VectorXi perm;                    // node_index(q) = phase_index perm(q)
  int node_count = 0;
};

SensitivityMatrices sensitivities(const SystemMatrices& sm);

// Permutation between phase-major (a1..aN, b1..bN, c1..cN) and node-major
// (a1, b1, c1, a2, ...) orderings of length-3N vectors and their matrices.
Vec reorder_by_node(const Vec& phase_ordered, int node_count);
Mat reorder_by_node(const Mat& phase_ordered, int node_count);

// Fixed-point current-injection solve of the full nonlinear equations on the
// primary network. `injections` is phase-ordered over all N+1 nodes in per
// unit (substation entries must be zero; the slack absorbs the balance), and
// the returned vector holds complex node voltages in the same ordering.
CVec solve_nonlinear_pf(const ReducedNetwork& net, const CVec& injections,
                        const Eigen::Vector3cd& substation_voltage);

// Constant-power element for the generalized solver used by the simulator.
// Wye injects S at bus_a; Delta injects through the pair (bus_a, bus_b).
struct PqElement {
  enum Kind { Wye, Delta } kind = Wye;
  int bus_a = 0;
  int bus_b = -1;
  Complex s;
};

// Same fixed point on an arbitrary admittance matrix with explicit slack
// buses. Used directly by the simulator, which appends service-branch buses.
CVec solve_pq_network(const CMat& Y, const std::vector<int>& slack_buses,
                      const CVec& slack_voltage, const std::vector<PqElement>& elements);

}  // namespace phaseid

#endif
