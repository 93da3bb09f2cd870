#include "phaseid/connection.hpp"

#include <cmath>
#include <numbers>

#include "phaseid/linear_pf.hpp"

namespace phaseid {

namespace {

// Pair incidence patterns: row i of W1 marks the two phases of pair i,
// row i of W2 signs them (+ leading phase, - lagging phase).
const Eigen::Matrix3d& w1() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 1, 1, 0, 0, 1, 1, 1, 0, 1).finished();
  return m;
}
const Eigen::Matrix3d& w2() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 1, -1, 0, 0, 1, -1, -1, 0, 1).finished();
  return m;
}

}  // namespace

std::pair<Complex, Complex> split_delta_power(double p, double q) {
  const double c = std::numbers::sqrt3 / 6.0;
  // one component of each part comes from the closed form, the other is the
  // remainder against the input, so the pair sums back to (p, q); for
  // power-factor-range inputs both remainders are exact subtractions
  const double re_i = 0.5 * p + c * q;
  const double im_j = 0.5 * q + c * p;
  return {Complex(re_i, q - im_j), Complex(p - re_i, im_j)};
}

double line_to_line_delta(double dv_i, double dv_j, double dtheta_i, double dtheta_j) {
  return 0.5 * std::numbers::sqrt3 * (dv_i + dv_j) + 0.5 * (dtheta_i - dtheta_j);
}

double line_to_line_exact(double v_i, double v_j, double theta_ij) {
  return std::sqrt(v_i * v_i + v_j * v_j - 2.0 * v_i * v_j * std::cos(theta_ij));
}

LoadMeta to_meta(const ReducedLoad& load) {
  return LoadMeta{load.id, load.cls, load.node, load.secondary};
}

BlockTables build_block_tables(std::span<const LoadMeta> loads, int node_count) {
  const int m3 = 3 * static_cast<int>(loads.size());
  const int n3 = 3 * node_count;
  BlockTables bt;
  bt.U1 = Mat::Zero(m3, n3);
  bt.U2 = Mat::Zero(m3, n3);
  bt.Uh1 = Mat::Zero(n3, m3);
  bt.Uh2 = Mat::Zero(n3, m3);

  const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d ones_third = Eigen::Matrix3d::Constant(1.0 / 3.0);
  const Eigen::Matrix3d u1_two = 0.5 * std::numbers::sqrt3 * w1();
  const Eigen::Matrix3d u2_two = 0.5 * w2();
  const Eigen::Matrix3d uh1_two = 0.5 * w1().transpose();
  const Eigen::Matrix3d uh2_two = (std::numbers::sqrt3 / 6.0) * w2().transpose();

  for (size_t m = 0; m < loads.size(); ++m) {
    const int node = loads[m].node;
    if (node < 1 || node > node_count)
      throw ValidationError("block tables: load '" + loads[m].id + "' hosted on invalid node");
    const int r = 3 * static_cast<int>(m);
    const int c = 3 * (node - 1);
    switch (loads[m].cls) {
      case PhaseClass::Single:
        bt.U1.block<3, 3>(r, c) = eye;
        bt.Uh1.block<3, 3>(c, r) = eye;
        break;
      case PhaseClass::Two:
        bt.U1.block<3, 3>(r, c) = u1_two;
        bt.U2.block<3, 3>(r, c) = u2_two;
        bt.Uh1.block<3, 3>(c, r) = uh1_two;
        bt.Uh2.block<3, 3>(c, r) = uh2_two;
        break;
      case PhaseClass::Three:
        bt.U1.block<3, 3>(r, c) = eye;
        bt.Uh1.block<3, 3>(c, r) = ones_third;
        break;
    }
  }
  return bt;
}

ReducedSensitivity build_reduced_sensitivity(const BlockTables& bt, const Mat& K_node,
                                             const Mat& L_node, const Mat& K_ang_node,
                                             const Mat& L_ang_node) {
  const Mat g1 = bt.U1 * K_node + bt.U2 * K_ang_node;
  const Mat g2 = bt.U1 * L_node + bt.U2 * L_ang_node;
  ReducedSensitivity rs;
  rs.Kh = g1 * bt.Uh1 + g2 * bt.Uh2;
  rs.Lh = g1 * bt.Uh2 - g2 * bt.Uh1;
  return rs;
}

std::pair<Vec, Vec> map_injections(const PhaseAssignment& x, const Vec& p, const Vec& q,
                                   const BlockTables& bt) {
  const int m = x.size();
  if (p.size() != m || q.size() != m)
    throw ValidationError("map_injections: power vector length does not match assignment");
  Vec xp = Vec::Zero(3 * m), xq = Vec::Zero(3 * m);
  for (int k = 0; k < m; ++k) {
    xp(x.slot(k)) = p(k);
    xq(x.slot(k)) = q(k);
  }
  Vec p_node = bt.Uh1 * xp + bt.Uh2 * xq;
  Vec q_node = -bt.Uh2 * xp + bt.Uh1 * xq;
  return {std::move(p_node), std::move(q_node)};
}

int MeasurementSet::sample_count() const {
  int total = 0;
  for (const auto& seg : segments) total += static_cast<int>(seg.times.size());
  return total;
}

int DifferencedSeries::row_count() const {
  int total = 0;
  for (const auto& seg : segments) total += static_cast<int>(seg.dv.rows());
  return total;
}

DifferencedSeries difference_series(const MeasurementSet& ms) {
  DifferencedSeries ds;
  ds.loads = ms.loads;
  ds.segments.reserve(ms.segments.size());
  for (const auto& seg : ms.segments) {
    const int s = static_cast<int>(seg.v.rows());
    if (s < 2) throw ValidationError("difference_series: segment with fewer than 2 samples");
    DiffSegment d;
    d.model_index = seg.model_index;
    d.dv = seg.v.bottomRows(s - 1) - seg.v.topRows(s - 1);
    d.dp = seg.p.bottomRows(s - 1) - seg.p.topRows(s - 1);
    d.dq = seg.q.bottomRows(s - 1) - seg.q.topRows(s - 1);
    d.dref = seg.ref.bottomRows(s - 1) - seg.ref.topRows(s - 1);
    ds.segments.push_back(std::move(d));
  }
  return ds;
}

namespace {

const DiffSegment& locate_row(const DifferencedSeries& ds, int t, int& row) {
  int offset = 0;
  for (const auto& seg : ds.segments) {
    const int n = static_cast<int>(seg.dv.rows());
    if (t < offset + n) {
      row = t - offset;
      return seg;
    }
    offset += n;
  }
  throw ValidationError("row index out of range");
}

}  // namespace

Vec model_voltage_delta(int t, const PhaseAssignment& x, const DifferencedSeries& ds,
                        std::span<const ReducedSensitivity> sens) {
  const int m_count = ds.load_count();
  if (x.size() != m_count)
    throw ValidationError("model_voltage_delta: assignment length does not match load count");
  int row = 0;
  const DiffSegment& seg = locate_row(ds, t, row);
  const ReducedSensitivity& rs = sens[seg.model_index];
  Vec out(m_count);
  for (int m = 0; m < m_count; ++m) {
    const int r = x.slot(m);
    double acc = seg.dref(row, ref_channel(ds.loads[m].cls, x.phase[m]));
    for (int k = 0; k < m_count; ++k) {
      const int c = x.slot(k);
      acc += rs.Kh(r, c) * seg.dp(row, k) + rs.Lh(r, c) * seg.dq(row, k);
    }
    out(m) = acc;
  }
  return out;
}

double evaluate_marginal_objective(int m, const PhaseAssignment& x, const DifferencedSeries& ds,
                                   std::span<const ReducedSensitivity> sens) {
  const int m_count = ds.load_count();
  if (x.size() != m_count)
    throw ValidationError("evaluate_marginal_objective: assignment length mismatch");
  if (m < 0 || m >= m_count) throw ValidationError("evaluate_marginal_objective: load index");
  const int r = x.slot(m);
  const int ref_col = ref_channel(ds.loads[m].cls, x.phase[m]);
  double sum = 0.0;
  long rows = 0;
  for (const auto& seg : ds.segments) {
    const ReducedSensitivity& rs = sens[seg.model_index];
    const int n = static_cast<int>(seg.dv.rows());
    for (int row = 0; row < n; ++row) {
      double acc = seg.dref(row, ref_col);
      for (int k = 0; k < m_count; ++k) {
        const int c = x.slot(k);
        acc += rs.Kh(r, c) * seg.dp(row, k) + rs.Lh(r, c) * seg.dq(row, k);
      }
      const double res = seg.dv(row, m) - acc;
      sum += res * res;
    }
    rows += n;
  }
  if (rows == 0) throw ValidationError("evaluate_marginal_objective: no data rows");
  return sum / static_cast<double>(rows);
}

Vec marginal_objectives(const PhaseAssignment& x, const DifferencedSeries& ds,
                        std::span<const ReducedSensitivity> sens) {
  const int m_count = ds.load_count();
  if (x.size() != m_count) throw ValidationError("marginal_objectives: assignment length mismatch");
  Eigen::VectorXi slots(m_count), ref_cols(m_count);
  for (int m = 0; m < m_count; ++m) {
    slots(m) = x.slot(m);
    ref_cols(m) = ref_channel(ds.loads[m].cls, x.phase[m]);
  }
  Vec sums = Vec::Zero(m_count);
  long rows = 0;
  for (const auto& seg : ds.segments) {
    const ReducedSensitivity& rs = sens[seg.model_index];
    const Mat k_sub = rs.Kh(slots, slots);
    const Mat l_sub = rs.Lh(slots, slots);
    const Mat ref_sel = seg.dref(Eigen::all, ref_cols);
    const Mat resid = seg.dv - ref_sel - seg.dp * k_sub.transpose() - seg.dq * l_sub.transpose();
    sums += resid.colwise().squaredNorm().transpose();
    rows += static_cast<long>(seg.dv.rows());
  }
  if (rows == 0) throw ValidationError("marginal_objectives: no data rows");
  return sums / static_cast<double>(rows);
}

}  // namespace phaseid
