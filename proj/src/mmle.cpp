#include "phaseid/mmle.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "json.hpp"
#include "phaseid/feeder.hpp"
#include "phaseid/linear_pf.hpp"
#include "phaseid/stats.hpp"

namespace phaseid {

LoadSolution solve_load(int m, const DifferencedSeries& ds,
                        std::span<const ReducedSensitivity> sens, const SolveOptions& opts) {
  const int m_count = ds.load_count();
  LoadSolution out;
  out.m = m;

  std::array<PhaseAssignment, 3> candidates;
  for (int i = 0; i < 3; ++i) {
    SubproblemInstance inst = build_subproblem(m, i, ds, sens);
    RelaxedSolution rel = solve_relaxed(inst, opts);
    std::vector<int> picks = round_solution(rel.x);

    PhaseAssignment& cand = candidates[i];
    cand.phase.assign(m_count, 0);
    cand.phase[m] = i;
    int t = 0;
    for (int k = 0; k < m_count; ++k) {
      if (k == m) continue;
      cand.phase[k] = picks[t++];
    }
    // score the rounded candidate, not the relaxed point, so ties and
    // invariances behave identically everywhere
    out.phase_objectives[i] = evaluate_marginal_objective(m, cand, ds, sens);
    out.iterations[i] = rel.iterations;
    out.kkt[i] = rel.kkt_residual;
  }

  out.chosen_phase = 0;
  for (int i = 1; i < 3; ++i)
    if (out.phase_objectives[i] < out.phase_objectives[out.chosen_phase]) out.chosen_phase = i;
  out.objective = out.phase_objectives[out.chosen_phase];
  out.assignment = candidates[out.chosen_phase];
  return out;
}

std::vector<std::array<int, 3>> tally_votes(std::span<const LoadSolution> solutions) {
  if (solutions.empty()) return {};
  const int m_count = static_cast<int>(solutions[0].assignment.size());
  std::vector<std::array<int, 3>> tallies(m_count, {0, 0, 0});
  for (const auto& s : solutions)
    for (int k = 0; k < m_count; ++k) ++tallies[k][s.assignment.phase[k]];
  return tallies;
}

PhaseAssignment aggregate_target_only(std::span<const LoadSolution> solutions) {
  PhaseAssignment x;
  x.phase.resize(solutions.size());
  for (const auto& s : solutions) x.phase[s.m] = s.chosen_phase;
  return x;
}

PhaseAssignment aggregate_voting(std::span<const LoadSolution> solutions,
                                 std::span<const LoadMeta> loads) {
  auto tallies = tally_votes(solutions);
  PhaseAssignment x = aggregate_target_only(solutions);
  for (size_t k = 0; k < tallies.size(); ++k) {
    if (loads[k].cls == PhaseClass::Three) continue;  // votes carry no signal here
    const auto& t = tallies[k];
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (t[j] > t[best]) best = j;
    const bool tied = (t[0] == t[best]) + (t[1] == t[best]) + (t[2] == t[best]) > 1;
    if (!tied) x.phase[k] = best;
  }
  return x;
}

IdentificationReport select_final(const PhaseAssignment& target_only, const PhaseAssignment& voting,
                                  const DifferencedSeries& ds,
                                  std::span<const ReducedSensitivity> sens) {
  IdentificationReport rep;
  const Vec f_target = marginal_objectives(target_only, ds, sens);
  const Vec f_voting = marginal_objectives(voting, ds, sens);
  rep.sum_f_target_only = f_target.sum();
  rep.sum_f_voting = f_voting.sum();
  const bool take_voting = rep.sum_f_voting < rep.sum_f_target_only;
  rep.method = take_voting ? "voting" : "target-only";
  rep.assignment = take_voting ? voting : target_only;
  const Vec& f_final = take_voting ? f_voting : f_target;

  rep.loads.resize(ds.load_count());
  for (int m = 0; m < ds.load_count(); ++m) {
    LoadReport& lr = rep.loads[m];
    lr.id = ds.loads[m].id;
    lr.cls = ds.loads[m].cls;
    lr.phase = rep.assignment.phase[m];
    lr.f_m = f_final(m);
  }
  return rep;
}

IdentificationReport identify(std::span<const ReducedNetwork> nets, const MeasurementSet& ms,
                              const IdentifyOptions& opts) {
  if (nets.empty()) throw ValidationError("identify: no network models");
  if (ms.loads.empty()) throw ValidationError("identify: no metered loads");
  for (const auto& seg : ms.segments)
    if (seg.model_index < 0 || seg.model_index >= static_cast<int>(nets.size()))
      throw ValidationError("identify: segment references a missing network model");

  std::vector<ReducedSensitivity> sens;
  sens.reserve(nets.size());
  for (const auto& net : nets) {
    const SystemMatrices sm = build_A(assemble_admittance(net));
    const SensitivityMatrices sm2 = sensitivities(sm);
    const BlockTables bt = build_block_tables(ms.loads, net.node_count());
    sens.push_back(
        build_reduced_sensitivity(bt, sm2.K_node, sm2.L_node, sm2.K_ang_node, sm2.L_ang_node));
  }

  const DifferencedSeries ds = difference_series(ms);
  const int m_count = ds.load_count();
  std::vector<LoadSolution> solutions(m_count);

  const int jobs = std::max(1, std::min(opts.jobs, m_count));
  if (jobs == 1) {
    for (int m = 0; m < m_count; ++m) solutions[m] = solve_load(m, ds, sens, opts.solver);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int m = w; m < m_count; m += jobs)
            solutions[m] = solve_load(m, ds, sens, opts.solver);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const PhaseAssignment target_only = aggregate_target_only(solutions);
  const PhaseAssignment voting = aggregate_voting(solutions, ms.loads);
  IdentificationReport rep = select_final(target_only, voting, ds, sens);

  const auto tallies = tally_votes(solutions);
  for (int m = 0; m < m_count; ++m) rep.loads[m].votes = tallies[m];

  if (opts.diagnostics != IdentifyOptions::Diagnostics::None) {
    for (int m = 0; m < m_count; ++m) {
      const ResidualSeries rs = residual_series(m, rep.assignment, ds, sens);
      rep.loads[m].residual_mean = rs.mean;
      rep.loads[m].residual_std = rs.stddev;
    }
  }
  if (opts.diagnostics == IdentifyOptions::Diagnostics::Full) rep.solutions = std::move(solutions);
  return rep;
}

IdentificationReport identify(const ReducedNetwork& net, const MeasurementSet& ms,
                              const IdentifyOptions& opts) {
  return identify(std::span<const ReducedNetwork>(&net, 1), ms, opts);
}

std::string report_to_json(const IdentificationReport& report, int indent) {
  nlohmann::json j;
  j["method"] = report.method;
  j["sum_f_target_only"] = report.sum_f_target_only;
  j["sum_f_voting"] = report.sum_f_voting;
  if (report.accuracy) j["accuracy"] = *report.accuracy;
  auto& loads = j["loads"] = nlohmann::json::array();
  for (const auto& lr : report.loads) {
    nlohmann::json jl;
    jl["id"] = lr.id;
    jl["class"] = class_label(lr.cls);
    jl["phase"] = phase_label(lr.cls, lr.phase);
    jl["votes"] = lr.votes;
    jl["f_m"] = lr.f_m;
    jl["residual_mean"] = lr.residual_mean;
    jl["residual_std"] = lr.residual_std;
    loads.push_back(std::move(jl));
  }
  return j.dump(indent);
}

void attach_accuracy(IdentificationReport& report,
                     const std::vector<std::pair<std::string, std::string>>& truth) {
  std::vector<std::string> ids;
  std::vector<PhaseClass> classes;
  std::vector<int> phases;
  for (const auto& lr : report.loads) {
    ids.push_back(lr.id);
    classes.push_back(lr.cls);
    phases.push_back(lr.phase);
  }
  report.accuracy = accuracy(ids, classes, phases, truth);
}

}  // namespace phaseid
