#ifndef PHASEID_TYPES_HPP
#define PHASEID_TYPES_HPP

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace phaseid {

using Complex = std::complex<double>;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

// Connection class of a load. A single-phase load attaches line-to-neutral,
// a two-phase load attaches line-to-line (delta), a three-phase load spreads
// over all three phases and the decision is which phase its meter reads.
enum class PhaseClass { Single, Two, Three };

// Decision index i in 0..2 means phase A/B/C for single- and three-phase
// loads, and pair AB/BC/CA for two-phase loads (pair i couples phases
// i and (i+1) mod 3).
std::string phase_label(PhaseClass cls, int i);
int phase_index(PhaseClass cls, const std::string& label);
std::string class_label(PhaseClass cls);
PhaseClass class_from_label(const std::string& label);

// Bad input data: malformed files, inconsistent references, unit problems.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: singular systems, non-convergence.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Failure while generating synthetic data.
struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace phaseid

#endif
