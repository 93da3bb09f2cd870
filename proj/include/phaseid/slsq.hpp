#ifndef PHASEID_SLSQ_HPP
#define PHASEID_SLSQ_HPP

#include <span>
#include <utility>
#include <vector>

#include "phaseid/connection.hpp"
#include "phaseid/types.hpp"

namespace phaseid {

// Least-squares subproblem for load m with its own phase pinned to i. The
// remaining loads' triples are the unknowns:
//   minimize (1/T) sum_t (target(t) - design_row(t) . x)^2
// over x in the product of per-load probability simplices. Column c of the
// design couples to columns(c) = (load k, phase j).
struct SubproblemInstance {
  int m = 0;
  int i = 0;
  Vec target;  // T
  Mat design;  // T x 3(M-1)
  std::vector<std::pair<int, int>> columns;

  // Gram cache so solver iterations cost O(dim^2) instead of O(T dim).
  Mat gram;          // design' design / T
  Vec lin;           // design' target / T
  double quad_const = 0.0;  // target' target / T

  int dim() const { return static_cast<int>(design.cols()); }
  int rows() const { return static_cast<int>(design.rows()); }
  double objective(const Vec& x) const;        // exact residual form
  double objective_gram(const Vec& x) const;   // cached quadratic form
  Vec gradient(const Vec& x) const;            // of objective_gram
  void build_cache();
};

SubproblemInstance build_subproblem(int m, int i, const DifferencedSeries& ds,
                                    std::span<const ReducedSensitivity> sens);

// Euclidean projection onto {x >= 0, sum x = 1} for a triple, applied in
// place to each consecutive group of three coordinates.
void project_simplex3(Vec& x);

struct SolveOptions {
  bool accelerated = false;     // momentum with adaptive restart
  double grad_tol = 1e-9;       // on the unit-step projected-gradient residual
  double rel_obj_tol = 1e-12;   // relative objective decrease
  long max_iterations = -1;     // default 10 * dim * 1000
  bool record_trace = false;
};

struct RelaxedSolution {
  Vec x;
  double objective = 0.0;      // (1/T) sum residual^2 at x
  double kkt_residual = 0.0;   // ||x - proj(x - grad)||_inf
  long iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

// Projected gradient with Armijo backtracking on the cached quadratic.
// Deterministic: fixed iteration order, no randomness. A zero design matrix
// short-circuits to the barycenter of every triple.
RelaxedSolution solve_relaxed(const SubproblemInstance& inst, const SolveOptions& opts = {});

// Rounds each triple to its largest coordinate, lowest index on ties.
// Returns the phase pick per non-target load, in column-triple order.
std::vector<int> round_solution(const Vec& x);

struct BruteForceResult {
  std::vector<int> phases;  // per non-target load
  double objective = 0.0;
};

// Exhaustive minimum over all 3^(M-1) binary assignments, first minimizer in
// lexicographic order on ties. Guarded to M-1 <= 7.
BruteForceResult brute_force(const SubproblemInstance& inst);

}  // namespace phaseid

#endif
