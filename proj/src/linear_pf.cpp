#include "phaseid/linear_pf.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace phaseid {

namespace {
constexpr double kTwoPiOverThree = 2.0 * std::numbers::pi / 3.0;
}

Vec flat_voltage(int node_count) { return Vec::Ones(3 * (node_count + 1)); }

Vec flat_angle(int node_count) {
  const int nn = node_count + 1;
  Vec theta(3 * nn);
  theta.segment(0, nn).setZero();
  theta.segment(nn, nn).setConstant(-kTwoPiOverThree);
  theta.segment(2 * nn, nn).setConstant(kTwoPiOverThree);
  return theta;
}

Mat remove_substation(const Mat& block, int node_count) {
  const int nn = node_count + 1;
  if (block.rows() != 3 * nn || block.cols() != 3 * nn)
    throw ValidationError("remove_substation: block size does not match node count");
  Eigen::VectorXi keep(3 * node_count);
  int k = 0;
  for (int i = 0; i < 3; ++i)
    for (int n = 1; n < nn; ++n) keep(k++) = i * nn + n;
  return block(keep, keep);
}

Mat SystemMatrices::reduced() const {
  const int n3 = 3 * node_count;
  Mat full(2 * n3, 2 * n3);
  full.topLeftCorner(n3, n3) = rA11;
  full.topRightCorner(n3, n3) = rA12;
  full.bottomLeftCorner(n3, n3) = rA21;
  full.bottomRightCorner(n3, n3) = rA22;
  return full;
}

SystemMatrices build_A(const AdmittanceMatrix& adm) {
  const int nn = adm.node_count + 1;
  if (adm.Y.rows() != 3 * nn || adm.Y.cols() != 3 * nn)
    throw ValidationError("build_A: admittance size does not match node count");

  // Phi rotates each phase block onto the flat voltage phasors.
  const Complex alpha = std::polar(1.0, -kTwoPiOverThree);
  CVec phi(3 * nn);
  phi.segment(0, nn).setConstant(Complex(1.0, 0.0));
  phi.segment(nn, nn).setConstant(alpha);
  phi.segment(2 * nn, nn).setConstant(alpha * alpha);
  const CMat b = phi.conjugate().asDiagonal() * adm.Y * phi.asDiagonal();

  SystemMatrices sm;
  sm.node_count = adm.node_count;
  sm.A11 = b.real();
  sm.A12 = -b.imag();
  sm.A21 = sm.A12;
  sm.A22 = -sm.A11;
  sm.rA11 = remove_substation(sm.A11, adm.node_count);
  sm.rA12 = remove_substation(sm.A12, adm.node_count);
  sm.rA21 = sm.rA12;
  sm.rA22 = -sm.rA11;

  // Numeric rank of the reduced system; below 6N the sensitivities are not
  // defined and downstream code must refuse to proceed.
  const Mat full = sm.reduced();
  Eigen::BDCSVD<Mat> svd(full);
  const Vec& sv = svd.singularValues();
  const double s0 = sv.size() ? sv(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (s0 > 0 && sv(i) / s0 > 1e-8) ++rank;
  sm.rank = rank;
  if (rank < 6 * sm.node_count) {
    std::ostringstream ss;
    ss << "reduced system is rank deficient: rank " << rank << " < " << 6 * sm.node_count
       << " (smallest singular value ratio "
       << (s0 > 0 ? sv(sv.size() - 1) / s0 : 0.0)
       << "); check for isolated phases or duplicated sections";
    sm.rank_diagnostic = ss.str();
  }
  return sm;
}

SensitivityMatrices sensitivities(const SystemMatrices& sm) {
  if (!sm.full_rank())
    throw SolverError("sensitivities: " + (sm.rank_diagnostic.empty()
                                               ? std::string("reduced system not full rank")
                                               : sm.rank_diagnostic));
  const int n3 = 3 * sm.node_count;
  const Mat full = sm.reduced();
  // One dense factorization; the blocks of the inverse are the sensitivities:
  // [v; theta] = inv(A_reduced) [p; q] with the q blocks sign-flipped by
  // convention (v = K p - L q).
  Eigen::PartialPivLU<Mat> lu(full);
  const Mat inv = lu.solve(Mat::Identity(2 * n3, 2 * n3));

  SensitivityMatrices s;
  s.node_count = sm.node_count;
  s.K = inv.topLeftCorner(n3, n3);
  s.L = -inv.topRightCorner(n3, n3);
  s.K_ang = inv.bottomLeftCorner(n3, n3);
  s.L_ang = -inv.bottomRightCorner(n3, n3);
  s.K_node = reorder_by_node(s.K, sm.node_count);
  s.L_node = reorder_by_node(s.L, sm.node_count);
  s.K_ang_node = reorder_by_node(s.K_ang, sm.node_count);
  s.L_ang_node = reorder_by_node(s.L_ang, sm.node_count);
  s.perm.resize(n3);
  for (int n = 0; n < sm.node_count; ++n)
    for (int i = 0; i < 3; ++i) s.perm(3 * n + i) = i * sm.node_count + n;
  return s;
}

Vec reorder_by_node(const Vec& phase_ordered, int node_count) {
  if (phase_ordered.size() != 3 * node_count)
    throw ValidationError("reorder_by_node: length does not match node count");
  Vec out(3 * node_count);
  for (int n = 0; n < node_count; ++n)
    for (int i = 0; i < 3; ++i) out(3 * n + i) = phase_ordered(i * node_count + n);
  return out;
}

Mat reorder_by_node(const Mat& phase_ordered, int node_count) {
  if (phase_ordered.rows() != 3 * node_count || phase_ordered.cols() != 3 * node_count)
    throw ValidationError("reorder_by_node: size does not match node count");
  Eigen::VectorXi perm(3 * node_count);
  for (int n = 0; n < node_count; ++n)
    for (int i = 0; i < 3; ++i) perm(3 * n + i) = i * node_count + n;
  return phase_ordered(perm, perm);
}

CVec solve_pq_network(const CMat& Y, const std::vector<int>& slack_buses,
                      const CVec& slack_voltage, const std::vector<PqElement>& elements) {
  const int n = static_cast<int>(Y.rows());
  std::vector<char> is_slack(n, 0);
  for (int b : slack_buses) is_slack[b] = 1;
  std::vector<int> free_buses;
  free_buses.reserve(n);
  for (int b = 0; b < n; ++b)
    if (!is_slack[b]) free_buses.push_back(b);
  const int nf = static_cast<int>(free_buses.size());

  Eigen::VectorXi free_idx(nf), slack_idx(static_cast<int>(slack_buses.size()));
  for (int k = 0; k < nf; ++k) free_idx(k) = free_buses[k];
  for (size_t k = 0; k < slack_buses.size(); ++k) slack_idx(static_cast<int>(k)) = slack_buses[k];

  const CMat Yff = Y(free_idx, free_idx);
  const CMat Yfs = Y(free_idx, slack_idx);
  Eigen::PartialPivLU<CMat> lu(Yff);

  std::vector<int> bus_to_free(n, -1);
  for (int k = 0; k < nf; ++k) bus_to_free[free_buses[k]] = k;

  CVec v = CVec::Zero(n);
  for (size_t k = 0; k < slack_buses.size(); ++k) v(slack_buses[k]) = slack_voltage(static_cast<int>(k));
  // start from the unloaded solution (exact when all injections vanish)
  CVec vf = lu.solve(-(Yfs * slack_voltage));
  for (int k = 0; k < nf; ++k) v(free_buses[k]) = vf(k);

  auto injection_current = [&](const CVec& volts) {
    CVec cur = CVec::Zero(nf);
    for (const auto& el : elements) {
      if (el.kind == PqElement::Wye) {
        const Complex vb = volts(el.bus_a);
        if (std::abs(vb) < 1e-12) throw SolverError("nonlinear solve: voltage collapsed at a load bus");
        const Complex ib = std::conj(el.s / vb);
        if (bus_to_free[el.bus_a] >= 0) cur(bus_to_free[el.bus_a]) += ib;
      } else {
        const Complex vab = volts(el.bus_a) - volts(el.bus_b);
        if (std::abs(vab) < 1e-12) throw SolverError("nonlinear solve: pair voltage collapsed at a load bus");
        const Complex iab = std::conj(el.s / vab);
        if (bus_to_free[el.bus_a] >= 0) cur(bus_to_free[el.bus_a]) += iab;
        if (bus_to_free[el.bus_b] >= 0) cur(bus_to_free[el.bus_b]) -= iab;
      }
    }
    return cur;
  };

  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    const CVec rhs = injection_current(v) - Yfs * slack_voltage;
    const CVec vf_new = lu.solve(rhs);
    double delta = 0.0;
    for (int k = 0; k < nf; ++k) delta = std::max(delta, std::abs(vf_new(k) - v(free_buses[k])));
    for (int k = 0; k < nf; ++k) v(free_buses[k]) = vf_new(k);
    if (delta < 1e-9) {
      converged = true;
      break;
    }
  }
  if (!converged) throw SolverError("nonlinear solve: no convergence within 200 iterations");

  // power mismatch check at the free buses
  CVec s_spec = CVec::Zero(n);
  for (const auto& el : elements) {
    if (el.kind == PqElement::Wye) {
      s_spec(el.bus_a) += el.s;
    } else {
      const Complex vab = v(el.bus_a) - v(el.bus_b);
      const Complex iab = std::conj(el.s / vab);
      s_spec(el.bus_a) += v(el.bus_a) * std::conj(iab);
      s_spec(el.bus_b) -= v(el.bus_b) * std::conj(iab);
    }
  }
  const CVec s_calc = v.cwiseProduct((Y * v).conjugate());
  double mismatch = 0.0;
  for (int b : free_buses) mismatch = std::max(mismatch, std::abs(s_calc(b) - s_spec(b)));
  if (mismatch > 1e-8) {
    std::ostringstream ss;
    ss << "nonlinear solve: power mismatch " << mismatch << " exceeds 1e-8";
    throw SolverError(ss.str());
  }
  return v;
}

CVec solve_nonlinear_pf(const ReducedNetwork& net, const CVec& injections,
                        const Eigen::Vector3cd& substation_voltage) {
  const int nn = net.node_count() + 1;
  if (injections.size() != 3 * nn)
    throw ValidationError("solve_nonlinear_pf: injection vector size mismatch");
  for (int i = 0; i < 3; ++i)
    if (injections(i * nn) != Complex(0.0, 0.0))
      throw ValidationError("solve_nonlinear_pf: substation injections must be zero");

  const AdmittanceMatrix adm = assemble_admittance(net);
  std::vector<int> slack = {0, nn, 2 * nn};
  CVec slack_v(3);
  for (int i = 0; i < 3; ++i) slack_v(i) = substation_voltage(i);
  std::vector<PqElement> elements;
  for (int i = 0; i < 3; ++i)
    for (int n = 1; n < nn; ++n)
      if (injections(i * nn + n) != Complex(0.0, 0.0))
        elements.push_back({PqElement::Wye, i * nn + n, -1, injections(i * nn + n)});
  return solve_pq_network(adm.Y, slack, slack_v, elements);
}

}  // namespace phaseid
