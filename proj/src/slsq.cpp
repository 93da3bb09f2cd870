#include "phaseid/slsq.hpp"

#include <algorithm>
#include <cmath>

namespace phaseid {

double SubproblemInstance::objective(const Vec& x) const {
  if (x.size() != design.cols()) throw ValidationError("subproblem objective: dimension mismatch");
  if (rows() == 0) throw ValidationError("subproblem objective: no data rows");
  return (target - design * x).squaredNorm() / static_cast<double>(rows());
}

double SubproblemInstance::objective_gram(const Vec& x) const {
  return quad_const - 2.0 * lin.dot(x) + x.dot(gram * x);
}

Vec SubproblemInstance::gradient(const Vec& x) const { return 2.0 * (gram * x - lin); }

void SubproblemInstance::build_cache() {
  const double t = static_cast<double>(rows());
  gram = design.transpose() * design / t;
  lin = design.transpose() * target / t;
  quad_const = target.squaredNorm() / t;
}

SubproblemInstance build_subproblem(int m, int i, const DifferencedSeries& ds,
                                    std::span<const ReducedSensitivity> sens) {
  const int m_count = ds.load_count();
  if (m < 0 || m >= m_count) throw ValidationError("build_subproblem: load index out of range");
  if (i < 0 || i > 2) throw ValidationError("build_subproblem: phase index out of range");
  const int rows = ds.row_count();
  if (rows == 0) throw ValidationError("build_subproblem: no data rows");
  const int dim = 3 * (m_count - 1);
  const int r = 3 * m + i;
  const int ref_col = ref_channel(ds.loads[m].cls, i);

  SubproblemInstance inst;
  inst.m = m;
  inst.i = i;
  inst.target.resize(rows);
  inst.design.resize(rows, dim);
  inst.columns.reserve(dim);
  for (int k = 0; k < m_count; ++k) {
    if (k == m) continue;
    for (int j = 0; j < 3; ++j) inst.columns.emplace_back(k, j);
  }

  int row0 = 0;
  for (const auto& seg : ds.segments) {
    const ReducedSensitivity& rs = sens[seg.model_index];
    const int n = static_cast<int>(seg.dv.rows());
    for (int row = 0; row < n; ++row) {
      // own-injection contribution is fixed by (m, i) and moves to the target
      const double eta = rs.Kh(r, r) * seg.dp(row, m) + rs.Lh(r, r) * seg.dq(row, m);
      inst.target(row0 + row) = seg.dv(row, m) - seg.dref(row, ref_col) - eta;
      int c = 0;
      for (int k = 0; k < m_count; ++k) {
        if (k == m) continue;
        for (int j = 0; j < 3; ++j, ++c)
          inst.design(row0 + row, c) =
              rs.Kh(r, 3 * k + j) * seg.dp(row, k) + rs.Lh(r, 3 * k + j) * seg.dq(row, k);
      }
    }
    row0 += n;
  }
  inst.build_cache();
  return inst;
}

void project_simplex3(Vec& x) {
  for (int base = 0; base + 2 < x.size(); base += 3) {
    double a = x(base), b = x(base + 1), c = x(base + 2);
    // sort descending
    double u1 = a, u2 = b, u3 = c;
    if (u1 < u2) std::swap(u1, u2);
    if (u2 < u3) std::swap(u2, u3);
    if (u1 < u2) std::swap(u1, u2);
    // largest k with u_k > (sum_{<=k} u - 1)/k
    double tau = u1 - 1.0;
    double cum = u1 + u2;
    if (u2 > (cum - 1.0) / 2.0) tau = (cum - 1.0) / 2.0;
    cum += u3;
    if (u3 > (cum - 1.0) / 3.0) tau = (cum - 1.0) / 3.0;
    x(base) = std::max(0.0, a - tau);
    x(base + 1) = std::max(0.0, b - tau);
    x(base + 2) = std::max(0.0, c - tau);
  }
}

namespace {

double pg_residual(const SubproblemInstance& inst, const Vec& x, const Vec& grad) {
  Vec probe = x - grad;
  project_simplex3(probe);
  return (x - probe).lpNorm<Eigen::Infinity>();
}

}  // namespace

RelaxedSolution solve_relaxed(const SubproblemInstance& inst, const SolveOptions& opts) {
  RelaxedSolution sol;
  const int dim = inst.dim();
  if (dim == 0) {
    // nothing to decide; the fixed (m, i) pair determines the objective
    sol.x.resize(0);
    sol.objective = inst.objective(sol.x);
    sol.converged = true;
    return sol;
  }
  if (inst.gram.rows() != dim) throw ValidationError("solve_relaxed: gram cache not built");

  Vec x = Vec::Constant(dim, 1.0 / 3.0);

  // an all-zero design makes every feasible point optimal; keep the barycenter
  if (inst.gram.diagonal().isZero(0.0)) {
    sol.x = x;
    sol.objective = inst.objective(x);
    sol.kkt_residual = pg_residual(inst, x, inst.gradient(x));
    sol.converged = true;
    return sol;
  }

  Eigen::SelfAdjointEigenSolver<Mat> eig(inst.gram, Eigen::EigenvaluesOnly);
  const double lip = 2.0 * std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  const double base_step = 1.0 / lip;
  const long max_iter = opts.max_iterations > 0 ? opts.max_iterations : 10L * dim * 1000L;

  double fx = inst.objective_gram(x);
  Vec grad = inst.gradient(x);
  Vec x_prev = x, grad_prev = grad;
  double step = base_step;
  // momentum state for the accelerated variant
  Vec y = x;
  double momentum_t = 1.0;

  long iter = 0;
  for (; iter < max_iter; ++iter) {
    if (opts.record_trace) sol.trace.push_back(fx);
    const double res = pg_residual(inst, x, grad);
    if (res <= opts.grad_tol) {
      sol.converged = true;
      break;
    }

    Vec x_new;
    double f_new;
    if (opts.accelerated) {
      Vec grad_y = inst.gradient(y);
      x_new = y - base_step * grad_y;
      project_simplex3(x_new);
      f_new = inst.objective_gram(x_new);
      if (f_new > fx) {  // restart momentum when it overshoots
        x_new = x - base_step * grad;
        project_simplex3(x_new);
        f_new = inst.objective_gram(x_new);
        momentum_t = 1.0;
        y = x_new;
      } else {
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_t * momentum_t));
        y = x_new + ((momentum_t - 1.0) / t_next) * (x_new - x);
        momentum_t = t_next;
      }
    } else {
      // spectral initial step, then Armijo backtracking along the arc
      if (iter > 0) {
        const Vec dx = x - x_prev;
        const Vec dg = grad - grad_prev;
        const double denom = dx.dot(dg);
        step = denom > 0 ? dx.squaredNorm() / denom : base_step;
        step = std::clamp(step, 0.01 * base_step, 1e6 * base_step);
      }
      double s = step;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        x_new = x - s * grad;
        project_simplex3(x_new);
        f_new = inst.objective_gram(x_new);
        const double decrease = grad.dot(x_new - x);
        if (decrease < 0.0 && f_new <= fx + 1e-4 * decrease) {
          accepted = true;
          break;
        }
        s *= 0.5;
      }
      // near the cached objective's noise floor the line search either fails
      // outright or accepts a step too small to move the iterate; neither
      // certifies progress, while the plain 1/L step still descends in exact
      // arithmetic, so take that instead of freezing short of optimality
      if (!accepted || (x_new - x).lpNorm<Eigen::Infinity>() <=
                           1e-13 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
        x_new = x - base_step * grad;
        project_simplex3(x_new);
        f_new = inst.objective_gram(x_new);
      }
    }

    x_prev = x;
    grad_prev = grad;
    const double f_old = fx;
    x = x_new;
    fx = f_new;
    grad = inst.gradient(x);
    // near machine precision the cached objective jitters without meaning, so
    // a stall needs both no decrease and an iterate that stopped moving
    const double moved = (x - x_prev).lpNorm<Eigen::Infinity>();
    if (f_old - fx <= opts.rel_obj_tol * std::max(std::abs(f_old), 1e-300) &&
        moved <= 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      ++iter;
      break;
    }
  }

  sol.x = x;
  sol.iterations = iter;
  sol.objective = inst.objective(x);
  sol.kkt_residual = pg_residual(inst, x, inst.gradient(x));
  if (!sol.converged) sol.converged = sol.kkt_residual <= opts.grad_tol;
  return sol;
}

std::vector<int> round_solution(const Vec& x) {
  if (x.size() % 3 != 0) throw ValidationError("round_solution: length not a multiple of 3");
  std::vector<int> picks(x.size() / 3);
  for (int t = 0; t < static_cast<int>(picks.size()); ++t) {
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (x(3 * t + j) > x(3 * t + best)) best = j;  // strict: ties keep the lowest index
    picks[t] = best;
  }
  return picks;
}

BruteForceResult brute_force(const SubproblemInstance& inst) {
  const int triples = inst.dim() / 3;
  if (triples > 7) throw ValidationError("brute_force: more than 7 free loads (3^k blow-up)");
  BruteForceResult best;
  best.phases.assign(triples, 0);
  Vec x = Vec::Zero(inst.dim());
  std::vector<int> pick(triples, 0);
  bool first = true;
  while (true) {
    x.setZero();
    for (int t = 0; t < triples; ++t) x(3 * t + pick[t]) = 1.0;
    const double f = inst.objective(x);
    if (first || f < best.objective) {
      best.objective = f;
      best.phases = pick;
      first = false;
    }
    // lexicographic increment, first triple most significant
    int pos = triples - 1;
    while (pos >= 0 && pick[pos] == 2) pick[pos--] = 0;
    if (pos < 0) break;
    ++pick[pos];
  }
  if (first) {
    // no free loads: the empty assignment is the only candidate
    best.objective = inst.objective(Vec::Zero(0));
  }
  return best;
}

}  // namespace phaseid
