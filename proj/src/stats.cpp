#include "phaseid/stats.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace phaseid {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// asymptotic Kolmogorov tail, Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)
double kolmogorov_tail(double lambda) {
  if (lambda < 1e-6) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-12) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

KsResult ks_normality(const Vec& series) {
  const int n = static_cast<int>(series.size());
  if (n < 5) throw ValidationError("ks_normality: need at least 5 samples");
  const double mean = series.mean();
  const double var = (series.array() - mean).square().sum() / (n - 1);
  if (!(var > 0)) throw ValidationError("ks_normality: zero variance");
  const double sd = std::sqrt(var);

  std::vector<double> sorted(series.data(), series.data() + n);
  std::sort(sorted.begin(), sorted.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = normal_cdf((sorted[i] - mean) / sd);
    d = std::max(d, std::max(f - static_cast<double>(i) / n, (i + 1.0) / n - f));
  }

  KsResult res;
  res.statistic = d;
  const double root_n = std::sqrt(static_cast<double>(n));
  res.p_value = kolmogorov_tail((root_n + 0.12 + 0.11 / root_n) * d);
  res.pass = res.p_value >= 0.05;
  return res;
}

Vec autocorrelation(const Vec& series, int max_lag) {
  const int n = static_cast<int>(series.size());
  if (max_lag < 1) throw ValidationError("autocorrelation: max_lag must be positive");
  if (n <= max_lag) throw ValidationError("autocorrelation: series shorter than max_lag");
  const double mean = series.mean();
  const Vec centered = series.array() - mean;
  const double denom = centered.squaredNorm();
  if (!(denom > 0)) throw ValidationError("autocorrelation: zero variance");
  Vec r(max_lag);
  for (int lag = 1; lag <= max_lag; ++lag)
    r(lag - 1) = centered.head(n - lag).dot(centered.tail(n - lag)) / denom;
  return r;
}

double accuracy(std::span<const std::string> ids, std::span<const PhaseClass> classes,
                std::span<const int> phases,
                const std::vector<std::pair<std::string, std::string>>& truth) {
  if (ids.size() != classes.size() || ids.size() != phases.size())
    throw ValidationError("accuracy: input spans differ in length");
  if (ids.empty()) throw ValidationError("accuracy: no loads to score");
  int hits = 0;
  for (size_t k = 0; k < ids.size(); ++k) {
    const std::string* label = nullptr;
    for (const auto& [id, lab] : truth)
      if (id == ids[k]) {
        label = &lab;
        break;
      }
    if (!label) throw ValidationError("accuracy: load '" + ids[k] + "' missing from truth");
    if (*label == phase_label(classes[k], phases[k])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ids.size());
}

ResidualSeries residual_series(int m, const PhaseAssignment& x, const DifferencedSeries& ds,
                               std::span<const ReducedSensitivity> sens) {
  const int m_count = ds.load_count();
  if (m < 0 || m >= m_count) throw ValidationError("residual_series: load index out of range");
  if (static_cast<int>(x.size()) != m_count)
    throw ValidationError("residual_series: assignment size mismatch");
  const int rows = ds.row_count();
  ResidualSeries out;
  out.r.resize(rows);

  const int r = x.slot(m);
  const int rc = ref_channel(ds.loads[m].cls, x.phase[m]);
  int row0 = 0;
  for (const auto& seg : ds.segments) {
    const ReducedSensitivity& rs = sens[seg.model_index];
    const int n = static_cast<int>(seg.dv.rows());
    for (int row = 0; row < n; ++row) {
      double pred = seg.dref(row, rc);
      for (int k = 0; k < m_count; ++k) {
        const int c = x.slot(k);
        pred += rs.Kh(r, c) * seg.dp(row, k) + rs.Lh(r, c) * seg.dq(row, k);
      }
      out.r(row0 + row) = seg.dv(row, m) - pred;
    }
    row0 += n;
  }

  out.mean = out.r.mean();
  const double var =
      rows > 1 ? (out.r.array() - out.mean).square().sum() / (rows - 1) : 0.0;
  out.stddev = std::sqrt(var);
  if (out.stddev > 0 && rows >= 5) {
    out.ks = ks_normality(out.r);
    const int max_lag = std::min(20, rows - 1);
    out.max_autocorr = autocorrelation(out.r, max_lag).cwiseAbs().maxCoeff();
  } else {
    // a residual this degenerate is already perfectly described
    out.ks = KsResult{0.0, 1.0, true};
    out.max_autocorr = 0.0;
  }
  return out;
}

std::string residual_diagnostics_json(const std::vector<std::string>& ids,
                                      const std::vector<ResidualSeries>& series) {
  if (ids.size() != series.size())
    throw ValidationError("residual_diagnostics_json: id/series length mismatch");
  nlohmann::json arr = nlohmann::json::array();
  for (size_t k = 0; k < ids.size(); ++k) {
    const ResidualSeries& rs = series[k];
    nlohmann::json j;
    j["id"] = ids[k];
    j["mean"] = rs.mean;
    j["std"] = rs.stddev;
    j["ks_statistic"] = rs.ks.statistic;
    j["ks_p_value"] = rs.ks.p_value;
    j["ks_pass"] = rs.ks.pass;
    j["max_autocorr"] = rs.max_autocorr;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace phaseid
