#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "phaseid/feeder.hpp"
#include "phaseid/linear_pf.hpp"

using namespace phaseid;

namespace {

std::string fixture(const char* name) {
  return std::string(PHASEID_FIXTURE_DIR) + "/" + name;
}

ReducedNetwork load_net(const char* name) {
  return reduce_network(parse_feeder_file(fixture(name)));
}

Eigen::Vector3cd balanced_source() {
  const Complex a = std::polar(1.0, -2.0 * std::numbers::pi / 3.0);
  Eigen::Vector3cd s;
  s << Complex(1.0, 0.0), a, a * a;
  return s;
}

}  // namespace

TEST_CASE("flat point has unit magnitudes at 120 degree spacing") {
  Vec v = flat_voltage(2);
  Vec th = flat_angle(2);
  REQUIRE(v.size() == 9);
  REQUIRE(th.size() == 9);
  CHECK(v.minCoeff() == 1.0);
  CHECK(v.maxCoeff() == 1.0);
  CHECK(th(0) == 0.0);
  CHECK(th(3) == doctest::Approx(-2.0 * std::numbers::pi / 3.0));
  CHECK(th(6) == doctest::Approx(2.0 * std::numbers::pi / 3.0));
  CHECK(th(1) == th(0));
}

TEST_CASE("system blocks satisfy the structural identities") {
  AdmittanceMatrix adm = assemble_admittance(load_net("feeder_small.json"));
  SystemMatrices sm = build_A(adm);
  CHECK((sm.A12 - sm.A21).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sm.A22 + sm.A11).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sm.rA12 - sm.rA21).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sm.rA22 + sm.rA11).cwiseAbs().maxCoeff() == 0.0);
  const int n = 3 * (adm.node_count + 1);
  CHECK(sm.A11.rows() == n);
  CHECK(sm.rA11.rows() == 3 * adm.node_count);
}

TEST_CASE("every shipped fixture yields a full-rank reduced system") {
  for (const char* name : {"feeder2.json", "feeder_small.json", "feeder8.json"}) {
    SystemMatrices sm = build_A(assemble_admittance(load_net(name)));
    CAPTURE(name);
    CHECK(sm.full_rank());
    CHECK(sm.rank == 6 * sm.node_count);
    CHECK(sm.rank_diagnostic.empty());
  }
}

TEST_CASE("a nearly disconnected phase is reported as rank deficient") {
  ReducedNetwork net;
  net.base_voltage_v = 2400.0;
  net.base_power_va = 500000.0;
  net.node_ids = {"sub", "n1"};
  LineSection line;
  line.from = 0;
  line.to = 1;
  line.z.setZero();
  line.z(0, 0) = Complex(1e10, 1e10);
  line.z(1, 1) = Complex(0.01, 0.03);
  line.z(2, 2) = Complex(0.01, 0.03);
  net.lines.push_back(line);
  ReducedLoad rl;
  rl.id = "ld";
  rl.node = 1;
  net.loads.push_back(rl);

  SystemMatrices sm = build_A(assemble_admittance(net));
  CHECK(!sm.full_rank());
  CHECK(sm.rank < 6 * sm.node_count);
  CHECK(!sm.rank_diagnostic.empty());
}

TEST_CASE("remove_substation drops the first row and column of each phase block") {
  const int n = 2;  // N
  Mat full = Mat::Zero(3 * (n + 1), 3 * (n + 1));
  for (int r = 0; r < full.rows(); ++r)
    for (int c = 0; c < full.cols(); ++c) full(r, c) = 100.0 * r + c;
  Mat red = remove_substation(full, n);
  REQUIRE(red.rows() == 3 * n);
  // reduced (phase 1, node 2) row came from full index 1*(n+1) + 2
  CHECK(red(1 * n + 1, 0 * n + 0) == full(1 * (n + 1) + 2, 0 * (n + 1) + 1));
  CHECK(red(2 * n + 0, 2 * n + 1) == full(2 * (n + 1) + 1, 2 * (n + 1) + 2));
}

TEST_CASE("sensitivities satisfy the defining relation of the reduced system") {
  for (const char* name : {"feeder_small.json", "feeder8.json"}) {
    SystemMatrices sm = build_A(assemble_admittance(load_net(name)));
    SensitivityMatrices sens = sensitivities(sm);
    const int d = 3 * sm.node_count;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    Vec p(d), q(d);
    for (int i = 0; i < d; ++i) {
      p(i) = g(rng);
      q(i) = g(rng);
    }
    Vec top = sens.K * p - sens.L * q;
    Vec bottom = sens.K_ang * p - sens.L_ang * q;
    Vec stacked(2 * d);
    stacked << top, bottom;
    Vec rhs(2 * d);
    rhs << p, q;
    double rel = (sm.reduced() * stacked - rhs).norm() / rhs.norm();
    CAPTURE(name);
    CHECK(rel < 1e-9);
  }
}

TEST_CASE("node ordering is a permutation consistent between vectors and matrices") {
  SystemMatrices sm = build_A(assemble_admittance(load_net("feeder_small.json")));
  SensitivityMatrices sens = sensitivities(sm);
  const int n = sm.node_count;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Vec v(3 * n);
  for (int i = 0; i < 3 * n; ++i) v(i) = g(rng);
  Vec by_node = reorder_by_node(v, n);
  for (int q = 0; q < 3 * n; ++q) CHECK(by_node(q) == v(sens.perm(q)));
  // matrix reorder applies the same permutation to rows and columns
  Mat kn = reorder_by_node(sens.K, n);
  CHECK((kn - sens.K_node).cwiseAbs().maxCoeff() == 0.0);
  // spot check: node-ordered (node 2, phase b) is phase-ordered b-block entry 1
  CHECK(sens.K_node(3 * 1 + 1, 3 * 0 + 0) == sens.K(1 * n + 1, 0 * n + 0));
}

TEST_CASE("nonlinear solve reproduces the source with no injections") {
  ReducedNetwork net = load_net("feeder_small.json");
  const int nn = net.node_count() + 1;
  CVec inj = CVec::Zero(3 * nn);
  CVec v = solve_nonlinear_pf(net, inj, balanced_source());
  Eigen::Vector3cd src = balanced_source();
  for (int ph = 0; ph < 3; ++ph)
    for (int node = 0; node < nn; ++node)
      CHECK(std::abs(v(ph * nn + node) - src(ph)) < 1e-12);
}

TEST_CASE("nonlinear solve balances complex power at every free bus") {
  ReducedNetwork net = load_net("feeder_small.json");
  const int nn = net.node_count() + 1;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CVec inj = CVec::Zero(3 * nn);
  for (int ph = 0; ph < 3; ++ph)
    for (int node = 1; node < nn; ++node)
      inj(ph * nn + node) = Complex(-0.02 * (0.5 + 0.5 * u(rng)), -0.01 * (0.5 + 0.5 * u(rng)));
  CVec v = solve_nonlinear_pf(net, inj, balanced_source());
  CVec current = assemble_admittance(net).Y * v;
  for (int ph = 0; ph < 3; ++ph)
    for (int node = 1; node < nn; ++node) {
      int b = ph * nn + node;
      Complex s = v(b) * std::conj(current(b));
      CHECK(std::abs(s - inj(b)) < 1e-10);
    }
}

TEST_CASE("linearization error is second order in the injection size") {
  ReducedNetwork net = load_net("feeder_small.json");
  SensitivityMatrices sens = sensitivities(build_A(assemble_admittance(net)));
  const int n = net.node_count();
  const int nn = n + 1;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Vec up(3 * n), uq(3 * n);
  for (int i = 0; i < 3 * n; ++i) {
    up(i) = -u(rng);
    uq(i) = -0.4 * u(rng);
  }
  auto lin_error = [&](double scale) {
    CVec inj = CVec::Zero(3 * nn);
    for (int ph = 0; ph < 3; ++ph)
      for (int node = 1; node < nn; ++node) {
        int r = ph * n + node - 1;
        inj(ph * nn + node) = scale * Complex(up(r), uq(r));
      }
    CVec v = solve_nonlinear_pf(net, inj, balanced_source());
    Vec v_lin = Vec::Ones(3 * n) + scale * (sens.K * up - sens.L * uq);
    double err = 0.0;
    for (int ph = 0; ph < 3; ++ph)
      for (int node = 1; node < nn; ++node)
        err = std::max(err, std::abs(std::abs(v(ph * nn + node)) - v_lin(ph * n + node - 1)));
    return err;
  };
  const double e1 = lin_error(0.03);
  const double e2 = lin_error(0.015);
  CHECK(e1 < 1e-3);
  CHECK(e1 / e2 > 3.0);  // roughly quadratic
  CHECK(e1 / e2 < 5.0);
}

TEST_CASE("generalized solver handles a delta element across a phase pair") {
  ReducedNetwork net = load_net("feeder2.json");
  const int nn = net.node_count() + 1;
  CMat y = assemble_admittance(net).Y;
  std::vector<int> slack = {0, nn, 2 * nn};
  CVec sv(3);
  sv << balanced_source()(0), balanced_source()(1), balanced_source()(2);
  PqElement el;
  el.kind = PqElement::Delta;
  el.bus_a = 0 * nn + 1;  // phase a of node 1
  el.bus_b = 1 * nn + 1;  // phase b of node 1
  el.s = Complex(-0.02, -0.008);
  CVec v = solve_pq_network(y, slack, sv, {el});
  CVec current = y * v;
  // all element current enters at bus_a and leaves at bus_b
  CHECK(std::abs(current(el.bus_a) + current(el.bus_b)) < 1e-11);
  Complex s_pair = (v(el.bus_a) - v(el.bus_b)) * std::conj(current(el.bus_a));
  CHECK(std::abs(s_pair - el.s) < 1e-10);
  // untouched phase c carries no current
  CHECK(std::abs(current(2 * nn + 1)) < 1e-11);
}
