#ifndef PHASEID_STATS_HPP
#define PHASEID_STATS_HPP

#include <span>
#include <string>
#include <vector>

#include "phaseid/connection.hpp"
#include "phaseid/types.hpp"

namespace phaseid {

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
  bool pass = false;  // p >= 0.05
};

// One-sample Kolmogorov-Smirnov test against a Gaussian with mean and
// standard deviation estimated from the sample, classical asymptotic
// p-value. Estimating the parameters from the same data makes the p-value
// conservative (the Lilliefors correction would tighten it); good enough to
// flag clearly non-Gaussian residuals. Throws on zero variance.
KsResult ks_normality(const Vec& series);

// Normalized autocorrelation r(1..max_lag); r(0) is omitted (always 1).
Vec autocorrelation(const Vec& series, int max_lag);

// Fraction of loads whose decision matches the truth. Every id must appear
// in the truth table and the intersection must be non-empty.
double accuracy(std::span<const std::string> ids, std::span<const PhaseClass> classes,
                std::span<const int> phases,
                const std::vector<std::pair<std::string, std::string>>& truth);

struct ResidualSeries {
  Vec r;
  double mean = 0.0;
  double stddev = 0.0;
  KsResult ks;
  double max_autocorr = 0.0;  // max |r(l)| over l = 1..20
};

// Differenced residual of load m under an assignment, with its normality and
// whiteness summaries.
ResidualSeries residual_series(int m, const PhaseAssignment& x, const DifferencedSeries& ds,
                               std::span<const ReducedSensitivity> sens);

std::string residual_diagnostics_json(const std::vector<std::string>& ids,
                                      const std::vector<ResidualSeries>& series);

}  // namespace phaseid

#endif
