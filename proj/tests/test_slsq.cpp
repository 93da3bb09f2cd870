#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "phaseid/slsq.hpp"

using namespace phaseid;

namespace {

// instance whose design carries signal from a known binary assignment
SubproblemInstance random_instance(std::mt19937_64& rng, int free_loads, int rows,
                                   double noise = 0.05) {
  std::normal_distribution<double> g;
  SubproblemInstance inst;
  inst.design.resize(rows, 3 * free_loads);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < 3 * free_loads; ++c) inst.design(r, c) = g(rng);
  Vec x_true = Vec::Zero(3 * free_loads);
  for (int k = 0; k < free_loads; ++k) x_true(3 * k + static_cast<int>(rng() % 3)) = 1.0;
  inst.target = inst.design * x_true;
  for (int r = 0; r < rows; ++r) inst.target(r) += noise * g(rng);
  for (int k = 0; k < free_loads; ++k)
    for (int j = 0; j < 3; ++j) inst.columns.emplace_back(k + 1, j);
  inst.build_cache();
  return inst;
}

}  // namespace

TEST_CASE("simplex projection fixes points already on the simplex") {
  Vec x(3);
  x << 0.5, 0.3, 0.2;
  Vec y = x;
  project_simplex3(y);
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("simplex projection handles vertices and ties") {
  Vec x(3);
  x << 2.0, -1.0, 0.0;
  project_simplex3(x);
  CHECK(x(0) == doctest::Approx(1.0));
  CHECK(x(1) == doctest::Approx(0.0));
  CHECK(x(2) == doctest::Approx(0.0));
  Vec t(3);
  t << 0.4, 0.4, 0.4;
  project_simplex3(t);
  for (int i = 0; i < 3; ++i) CHECK(t(i) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("simplex projection is the nearest feasible point") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vec y(3);
    for (int i = 0; i < 3; ++i) y(i) = 2.0 * g(rng);
    Vec p = y;
    project_simplex3(p);
    CHECK(p.minCoeff() >= -1e-15);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    // optimality: no feasible point is closer along any direction
    for (int probe = 0; probe < 20; ++probe) {
      Vec z(3);
      double a = u(rng), b = u(rng), c = u(rng);
      double s = a + b + c + 1e-12;
      z << a / s, b / s, c / s;
      CHECK((y - p).dot(z - p) <= 1e-10);
    }
  }
}

TEST_CASE("projection applies to each triple independently") {
  Vec x(6);
  x << 2.0, -1.0, 0.0, 0.4, 0.4, 0.4;
  project_simplex3(x);
  CHECK(x(0) == doctest::Approx(1.0));
  CHECK(x(3) == doctest::Approx(1.0 / 3.0));
  CHECK(x.head(3).sum() == doctest::Approx(1.0));
  CHECK(x.tail(3).sum() == doctest::Approx(1.0));
}

TEST_CASE("cached quadratic matches the residual objective and its gradient") {
  std::mt19937_64 rng(21);
  SubproblemInstance inst = random_instance(rng, 2, 50);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Vec x(6);
    for (int i = 0; i < 6; ++i) x(i) = u(rng);
    project_simplex3(x);
    CHECK(inst.objective(x) == doctest::Approx(inst.objective_gram(x)).epsilon(1e-12));
    Vec grad = inst.gradient(x);
    for (int i = 0; i < 6; ++i) {
      Vec xp = x, xm = x;
      const double h = 1e-6;
      xp(i) += h;
      xm(i) -= h;
      double fd = (inst.objective_gram(xp) - inst.objective_gram(xm)) / (2.0 * h);
      CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("solver recovers a clean vertex") {
  std::mt19937_64 rng(33);
  SubproblemInstance inst = random_instance(rng, 3, 200, 0.0);
  RelaxedSolution sol = solve_relaxed(inst);
  CHECK(sol.converged);
  CHECK(sol.kkt_residual <= 1e-9);
  CHECK(sol.objective < 1e-12);
  std::vector<int> picks = round_solution(sol.x);
  REQUIRE(picks.size() == 3);
  for (int k = 0; k < 3; ++k) CHECK(sol.x(3 * k + picks[k]) > 1.0 - 1e-6);
}

TEST_CASE("zero design short-circuits to the barycenter") {
  SubproblemInstance inst;
  inst.design = Mat::Zero(10, 6);
  inst.target = Vec::Ones(10);
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 3; ++j) inst.columns.emplace_back(k + 1, j);
  inst.build_cache();
  RelaxedSolution sol = solve_relaxed(inst);
  CHECK(sol.converged);
  for (int i = 0; i < 6; ++i) CHECK(sol.x(i) == doctest::Approx(1.0 / 3.0));
  CHECK(sol.objective == doctest::Approx(1.0));
}

TEST_CASE("empty instance evaluates the constant objective") {
  SubproblemInstance inst;
  inst.design = Mat::Zero(8, 0);
  inst.target = Vec::Constant(8, 0.5);
  inst.build_cache();
  RelaxedSolution sol = solve_relaxed(inst);
  CHECK(sol.converged);
  CHECK(sol.x.size() == 0);
  CHECK(sol.objective == doctest::Approx(0.25));
  BruteForceResult bf = brute_force(inst);
  CHECK(bf.phases.empty());
  CHECK(bf.objective == doctest::Approx(0.25));
}

TEST_CASE("accelerated mode reaches the same minimum") {
  std::mt19937_64 rng(55);
  SubproblemInstance inst = random_instance(rng, 4, 100);
  SolveOptions plain;
  SolveOptions fast;
  fast.accelerated = true;
  RelaxedSolution a = solve_relaxed(inst, plain);
  RelaxedSolution b = solve_relaxed(inst, fast);
  CHECK(a.converged);
  CHECK(b.converged);
  CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-8));
  CHECK((a.x - b.x).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("relaxed minimum never exceeds the best binary assignment") {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 25; ++trial) {
    int free_loads = 1 + static_cast<int>(rng() % 3);
    SubproblemInstance inst = random_instance(rng, free_loads, 60, 0.3);
    RelaxedSolution sol = solve_relaxed(inst);
    BruteForceResult bf = brute_force(inst);
    CHECK(sol.objective <= bf.objective + 1e-10);
    CHECK(sol.kkt_residual <= 1e-8);
  }
}

TEST_CASE("solver output is deterministic") {
  std::mt19937_64 rng(71);
  SubproblemInstance inst = random_instance(rng, 3, 80);
  RelaxedSolution a = solve_relaxed(inst);
  RelaxedSolution b = solve_relaxed(inst);
  CHECK(a.iterations == b.iterations);
  CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.objective == b.objective);
}

TEST_CASE("rounding takes the largest coordinate, lowest index on ties") {
  Vec x(6);
  x << 0.2, 0.5, 0.3, 0.4, 0.4, 0.2;
  std::vector<int> picks = round_solution(x);
  REQUIRE(picks.size() == 2);
  CHECK(picks[0] == 1);
  CHECK(picks[1] == 0);
}

TEST_CASE("exhaustive search refuses oversized instances") {
  std::mt19937_64 rng(81);
  SubproblemInstance inst = random_instance(rng, 8, 10);
  CHECK_THROWS_AS(brute_force(inst), ValidationError);
}

TEST_CASE("trace records a non-increasing tail when requested") {
  std::mt19937_64 rng(91);
  SubproblemInstance inst = random_instance(rng, 2, 60);
  SolveOptions opts;
  opts.record_trace = true;
  RelaxedSolution sol = solve_relaxed(inst, opts);
  REQUIRE(sol.trace.size() >= 2);
  CHECK(sol.trace.back() <= sol.trace.front() + 1e-15);
}
