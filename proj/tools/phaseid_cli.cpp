#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "phaseid/feeder.hpp"
#include "phaseid/linear_pf.hpp"
#include "phaseid/measurements.hpp"
#include "phaseid/mmle.hpp"
#include "phaseid/simulate.hpp"
#include "phaseid/stats.hpp"

#include "json.hpp"

namespace {

using namespace phaseid;

struct SimulateArgs {
  std::string feeder, out, truth_out, assignment, profiles, start = "2024-01-01T00:00:00Z";
  std::string mode = "linear", noise_placement = "sample";
  int samples = 2160;
  std::int64_t step = 3600;
  double noise = 0.0, penetration = 1.0, load_scale = 0.05;
  bool quantize = false;
  std::uint64_t seed = 12345;
};

struct IdentifyArgs {
  std::string feeder, measurements, out, truth, dump_dir, dump_format = "bin";
  std::string diagnostics = "summary";
  int jobs = 1;
  bool flip_sign = false, accelerated = false;
};

struct EvaluateArgs {
  std::string feeder, measurements, assignment, out;
  bool flip_sign = false;
};

PhaseAssignment assignment_from_truth(const TruthMap& truth,
                                      const std::vector<Load>& loads) {
  PhaseAssignment x;
  x.phase.reserve(loads.size());
  for (const auto& load : loads) {
    const std::string* label = truth.find(load.id);
    if (!label) throw ValidationError("assignment file misses load '" + load.id + "'");
    x.phase.push_back(phase_index(load.cls, *label));
  }
  return x;
}

MeasurementSet load_measurements(const std::string& feeder_path, const std::string& csv_path,
                                 bool flip_sign, FeederModel* model_out,
                                 ReducedNetwork* net_out) {
  FeederModel model = parse_feeder_file(feeder_path);
  ReducedNetwork net = reduce_network(model);
  RawMeasurements raw = parse_measurement_csv(read_file(csv_path));
  MeasurementSet ms = to_measurement_set(raw, net, flip_sign);
  if (model_out) *model_out = std::move(model);
  if (net_out) *net_out = std::move(net);
  return ms;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty())
    std::cout << content << '\n';
  else
    write_file(path, content.back() == '\n' ? content : content + '\n');
}

int cmd_simulate(const SimulateArgs& a) {
  FeederModel model = parse_feeder_file(a.feeder);

  SimulationSpec spec;
  spec.mode = a.mode == "nonlinear" ? SimulationSpec::Mode::Nonlinear : SimulationSpec::Mode::Linear;
  spec.samples = a.samples;
  spec.start_time = parse_iso8601(a.start);
  spec.step_seconds = a.step;
  spec.noise_class = a.noise;
  spec.noise_placement = a.noise_placement == "cumulative"
                             ? SimulationSpec::NoisePlacement::Cumulative
                             : SimulationSpec::NoisePlacement::Sample;
  spec.quantize = a.quantize;
  spec.penetration = a.penetration;
  spec.seed = a.seed;
  spec.load_scale = a.load_scale;
  if (!a.profiles.empty()) spec.profiles_csv = read_file(a.profiles);

  if (!a.assignment.empty()) {
    spec.truth = assignment_from_truth(parse_truth_json(read_file(a.assignment)), model.loads);
  } else {
    std::mt19937_64 rng(a.seed ^ 0x51ED270B9A3E1FB5ULL);
    std::uniform_int_distribution<int> pick(0, 2);
    spec.truth.phase.reserve(model.loads.size());
    for (size_t m = 0; m < model.loads.size(); ++m) spec.truth.phase.push_back(pick(rng));
  }

  SimulationResult result = generate(spec, model);
  write_file(a.out, write_measurement_csv(result.raw));
  if (!a.truth_out.empty()) write_file(a.truth_out, write_truth_json(result.truth));
  std::cerr << "wrote " << result.raw.times.size() << " samples for " << result.raw.load_ids.size()
            << " meters to " << a.out << '\n';
  return 0;
}

int cmd_identify(const IdentifyArgs& a) {
  ReducedNetwork net;
  MeasurementSet ms = load_measurements(a.feeder, a.measurements, a.flip_sign, nullptr, &net);

  IdentifyOptions opts;
  opts.jobs = a.jobs;
  opts.solver.accelerated = a.accelerated;
  opts.diagnostics = a.diagnostics == "none"   ? IdentifyOptions::Diagnostics::None
                     : a.diagnostics == "full" ? IdentifyOptions::Diagnostics::Full
                                               : IdentifyOptions::Diagnostics::Summary;

  IdentificationReport report = identify(net, ms, opts);
  if (!a.truth.empty()) attach_accuracy(report, parse_truth_json(read_file(a.truth)).entries);

  if (!a.dump_dir.empty()) {
    std::filesystem::create_directories(a.dump_dir);
    const SensitivityMatrices sm = sensitivities(build_A(assemble_admittance(net)));
    const BlockTables bt = build_block_tables(ms.loads, net.node_count());
    const ReducedSensitivity rs =
        build_reduced_sensitivity(bt, sm.K_node, sm.L_node, sm.K_ang_node, sm.L_ang_node);
    const bool csv = a.dump_format == "csv";
    auto dump = [&](const Mat& m, const std::string& name) {
      const std::string path = a.dump_dir + "/" + name + (csv ? ".csv" : ".bin");
      csv ? dump_matrix_csv(m, path) : dump_matrix_binary(m, path);
    };
    dump(sm.K, "K");
    dump(sm.L, "L");
    dump(sm.K_ang, "K_ang");
    dump(sm.L_ang, "L_ang");
    dump(rs.Kh, "K_load");
    dump(rs.Lh, "L_load");
  }

  emit(a.out, report_to_json(report));
  return 0;
}

int cmd_evaluate(const EvaluateArgs& a) {
  FeederModel model;
  ReducedNetwork net;
  MeasurementSet ms = load_measurements(a.feeder, a.measurements, a.flip_sign, &model, &net);

  const TruthMap truth = parse_truth_json(read_file(a.assignment));
  PhaseAssignment x;
  x.phase.reserve(ms.loads.size());
  for (const auto& meta : ms.loads) {
    const std::string* label = truth.find(meta.id);
    if (!label) throw ValidationError("assignment file misses load '" + meta.id + "'");
    x.phase.push_back(phase_index(meta.cls, *label));
  }

  const SensitivityMatrices sm = sensitivities(build_A(assemble_admittance(net)));
  const BlockTables bt = build_block_tables(ms.loads, net.node_count());
  const ReducedSensitivity rs =
      build_reduced_sensitivity(bt, sm.K_node, sm.L_node, sm.K_ang_node, sm.L_ang_node);
  const DifferencedSeries ds = difference_series(ms);
  std::span<const ReducedSensitivity> sens(&rs, 1);

  const Vec f = marginal_objectives(x, ds, sens);
  std::vector<std::string> ids;
  std::vector<ResidualSeries> series;
  for (int m = 0; m < ds.load_count(); ++m) {
    ids.push_back(ms.loads[m].id);
    series.push_back(residual_series(m, x, ds, sens));
  }

  nlohmann::json j;
  j["sum_f"] = f.sum();
  j["per_load"] = nlohmann::json::parse(residual_diagnostics_json(ids, series));
  for (int m = 0; m < ds.load_count(); ++m) j["per_load"][m]["f_m"] = f(m);
  emit(a.out, j.dump(2));
  return 0;
}

int cmd_validate(const std::string& feeder_path) {
  const FeederModel model = parse_feeder_file(feeder_path);
  const ReducedNetwork net = reduce_network(model);
  const SystemMatrices sys = build_A(assemble_admittance(net));
  std::printf("nodes: %d (+substation)\n", net.node_count());
  std::printf("line sections: %zu\n", net.lines.size());
  std::printf("service branches: %zu\n", model.branches.size());
  std::printf("loads: %zu\n", net.loads.size());
  std::printf("reduced system rank: %d of %d\n", sys.rank, 6 * net.node_count());
  if (!sys.full_rank()) {
    std::printf("FAIL %s\n", sys.rank_diagnostic.c_str());
    return 2;
  }
  std::printf("OK model is observable\n");
  return 0;
}

bool close_to(double got, double want, double tol) { return std::abs(got - want) <= tol; }

int cmd_oracle_check() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("%s %s\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
  };

  {
    const auto [v_eq, s_eq] = apply_reduction(Complex(-0.01, -0.02), Complex(1.0, 0.0), 1.0);
    check("single-branch reduction",
          close_to(v_eq, std::sqrt(0.9805), 1e-15) && close_to(s_eq.real(), 0.99, 1e-15) &&
              close_to(s_eq.imag(), -0.02, 1e-15));
    const auto [v_back, s_back] = invert_reduction(Complex(-0.01, -0.02), s_eq, v_eq);
    check("reduction round trip",
          close_to(v_back, 1.0, 1e-12) && close_to(s_back.real(), 1.0, 1e-12) &&
              close_to(s_back.imag(), 0.0, 1e-12));
  }
  {
    const auto [s_i, s_j] = split_delta_power(1.0, 0.0);
    check("delta power split",
          close_to(s_i.real(), 0.5, 1e-15) && close_to(s_i.imag(), -std::sqrt(3.0) / 6.0, 1e-15) &&
              s_i.real() + s_j.real() == 1.0 && s_i.imag() + s_j.imag() == 0.0);
  }
  check("line-to-line magnitude",
        close_to(line_to_line_exact(1.0, 1.0, -2.0 * 3.14159265358979323846 / 3.0),
                 std::sqrt(3.0), 1e-12));
  {
    // two-bus network, one line: closed-form voltage drop
    const char* feeder_json = R"({
      "base_voltage_v": 2400, "base_power_va": 500000,
      "nodes": [{"id": "sub"}, {"id": "n1"}],
      "lines": [{"from": "sub", "to": "n1", "z_ohm": [
        [[1.0, 2.0], [0.2, 0.5], [0.2, 0.5]],
        [[0.2, 0.5], [1.0, 2.0], [0.2, 0.5]],
        [[0.2, 0.5], [0.2, 0.5], [1.0, 2.0]]]}],
      "loads": [{"id": "L1", "class": "single", "node": "n1"}]
    })";
    const ReducedNetwork net = reduce_network(parse_feeder(feeder_json));
    const SystemMatrices sys = build_A(assemble_admittance(net));
    check("system rank", sys.full_rank() && sys.rank == 6);
    const SensitivityMatrices sm = sensitivities(sys);
    // defining relation: A * [K p - L q; K_ang p - L_ang q] = [p; q]
    Vec p = Vec::LinSpaced(3, 0.01, 0.03), q = Vec::LinSpaced(3, -0.02, 0.0);
    Vec stacked(6);
    stacked << sm.K * p - sm.L * q, sm.K_ang * p - sm.L_ang * q;
    Vec rhs(6);
    rhs << p, q;
    check("sensitivity identity", (sys.reduced() * stacked - rhs).lpNorm<Eigen::Infinity>() < 1e-9);
  }
  if (failures) std::printf("%d oracle check(s) failed\n", failures);
  return failures ? 5 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phase connection identification from smart meter data"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "generate synthetic meter data for a feeder");
  sim_cmd->add_option("--feeder", sim.feeder, "feeder description JSON")->required();
  sim_cmd->add_option("--out", sim.out, "output measurement CSV")->required();
  sim_cmd->add_option("--truth-out", sim.truth_out, "write the true phase labels here");
  sim_cmd->add_option("--assignment", sim.assignment,
                      "true phases as JSON {load: label}; random when omitted");
  sim_cmd->add_option("--mode", sim.mode, "linear | nonlinear")
      ->check(CLI::IsMember({"linear", "nonlinear"}))
      ->capture_default_str();
  sim_cmd->add_option("--samples", sim.samples, "number of raw samples")->capture_default_str();
  sim_cmd->add_option("--start", sim.start, "first timestamp (ISO-8601)")->capture_default_str();
  sim_cmd->add_option("--step", sim.step, "sample spacing in seconds")->capture_default_str();
  sim_cmd->add_option("--noise", sim.noise, "meter class: three-sigma error over nominal")
      ->capture_default_str();
  sim_cmd->add_option("--noise-placement", sim.noise_placement, "sample | cumulative")
      ->check(CLI::IsMember({"sample", "cumulative"}))
      ->capture_default_str();
  sim_cmd->add_flag("--quantize", sim.quantize, "round outputs to meter resolution");
  sim_cmd->add_option("--penetration", sim.penetration, "fraction of loads with meters")
      ->capture_default_str();
  sim_cmd->add_option("--load-scale", sim.load_scale, "mean per-load draw, per unit")
      ->capture_default_str();
  sim_cmd->add_option("--profiles", sim.profiles, "real power profiles CSV (wide format)");
  sim_cmd->add_option("--seed", sim.seed, "RNG seed")->capture_default_str();

  IdentifyArgs idn;
  auto* idn_cmd = app.add_subcommand("identify", "estimate phase connections from meter data");
  idn_cmd->add_option("--feeder", idn.feeder, "feeder description JSON")->required();
  idn_cmd->add_option("--measurements", idn.measurements, "measurement CSV")->required();
  idn_cmd->add_option("--out", idn.out, "report JSON path (stdout when omitted)");
  idn_cmd->add_option("--truth", idn.truth, "truth JSON; adds accuracy to the report");
  idn_cmd->add_option("--jobs", idn.jobs, "worker threads for per-load solves")
      ->capture_default_str();
  idn_cmd->add_flag("--flip-sign", idn.flip_sign, "meter data is consumption-positive");
  idn_cmd->add_flag("--accelerated", idn.accelerated, "momentum variant of the solver");
  idn_cmd->add_option("--diagnostics", idn.diagnostics, "none | summary | full")
      ->check(CLI::IsMember({"none", "summary", "full"}))
      ->capture_default_str();
  idn_cmd->add_option("--dump-matrices", idn.dump_dir, "write model matrices to this directory");
  idn_cmd->add_option("--dump-format", idn.dump_format, "bin | csv")
      ->check(CLI::IsMember({"bin", "csv"}))
      ->capture_default_str();

  EvaluateArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "score a given assignment against meter data");
  ev_cmd->add_option("--feeder", ev.feeder, "feeder description JSON")->required();
  ev_cmd->add_option("--measurements", ev.measurements, "measurement CSV")->required();
  ev_cmd->add_option("--assignment", ev.assignment, "phases to score, JSON {load: label}")
      ->required();
  ev_cmd->add_option("--out", ev.out, "diagnostics JSON path (stdout when omitted)");
  ev_cmd->add_flag("--flip-sign", ev.flip_sign, "meter data is consumption-positive");

  std::string val_feeder;
  auto* val_cmd = app.add_subcommand("validate", "parse a feeder and check observability");
  val_cmd->add_option("--feeder", val_feeder, "feeder description JSON")->required();

  auto* orc_cmd = app.add_subcommand("oracle-check", "verify built-in numeric identities");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim);
    if (idn_cmd->parsed()) return cmd_identify(idn);
    if (ev_cmd->parsed()) return cmd_evaluate(ev);
    if (val_cmd->parsed()) return cmd_validate(val_feeder);
    if (orc_cmd->parsed()) return cmd_oracle_check();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << '\n';
    return 3;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
