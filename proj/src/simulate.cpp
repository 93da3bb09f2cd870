#include "phaseid/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "phaseid/linear_pf.hpp"

namespace phaseid {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

std::mt19937_64 salted_rng(std::uint64_t seed, std::uint64_t salt) {
  return std::mt19937_64(seed ^ (0x9E3779B97F4A7C15ULL * (salt + 1)));
}

double line_to_line_balanced(double v_i, double v_j) {
  return std::sqrt(v_i * v_i + v_j * v_j + v_i * v_j);
}

void fill_pair_channels(Mat& ref, int t) {
  ref(t, 3) = line_to_line_balanced(ref(t, 0), ref(t, 1));
  ref(t, 4) = line_to_line_balanced(ref(t, 1), ref(t, 2));
  ref(t, 5) = line_to_line_balanced(ref(t, 2), ref(t, 0));
}

Mat parse_profile_table(const std::string& text, int t_count, int load_count) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("profile file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> head;
  for (size_t pos = 0; pos <= line.size();) {
    const size_t next = line.find(',', pos);
    head.push_back(line.substr(pos, next == std::string::npos ? next : next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  const int skip = !head.empty() && head[0] == "time" ? 1 : 0;
  const int cols = static_cast<int>(head.size()) - skip;
  if (cols < load_count)
    throw ValidationError("profile file has " + std::to_string(cols) + " meter columns, need " +
                          std::to_string(load_count));

  Mat table(t_count, load_count);
  int row = 0;
  int line_no = 1;
  while (row < t_count && std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t pos = 0;
    for (int f = 0; f < skip + cols; ++f) {
      const size_t next = line.find(',', pos);
      if (next == std::string::npos && f + 1 < skip + cols)
        throw ValidationError("profile line " + std::to_string(line_no) + ": too few fields");
      const std::string field = line.substr(pos, next == std::string::npos ? next : next - pos);
      if (f >= skip && f - skip < load_count) {
        char* end = nullptr;
        table(row, f - skip) = std::strtod(field.c_str(), &end);
        if (end == field.c_str() || *end != '\0')
          throw ValidationError("profile line " + std::to_string(line_no) + ": bad value '" +
                                field + "'");
      }
      pos = next + 1;
    }
    ++row;
  }
  if (row < t_count)
    throw ValidationError("profile file has " + std::to_string(row) + " rows, need " +
                          std::to_string(t_count));
  return table;
}

}  // namespace

ProfileSet synthesize_profiles(const SimulationSpec& spec, int load_count) {
  if (load_count <= 0) throw ValidationError("profiles: need at least one load");
  if (spec.samples < 2) throw ValidationError("profiles: need at least two samples");
  if (spec.load_scale <= 0) throw ValidationError("profiles: load_scale must be positive");
  if (!(spec.fluct_rho >= 0 && spec.fluct_rho < 1))
    throw ValidationError("profiles: fluct_rho must lie in [0, 1)");
  if (!(spec.daily_amplitude >= 0 && spec.daily_amplitude < 1))
    throw ValidationError("profiles: daily_amplitude must lie in [0, 1)");

  const int t_count = spec.samples;
  ProfileSet ps;
  ps.p.resize(t_count, load_count);
  ps.q.resize(t_count, load_count);

  auto rng = salted_rng(spec.seed, 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> unit;

  if (!spec.profiles_csv.empty()) {
    const Mat table = parse_profile_table(spec.profiles_csv, t_count, load_count);
    for (int m = 0; m < load_count; ++m) {
      // external shapes are normalized so every meter draws load_scale on average
      const double mean_abs = table.col(m).cwiseAbs().mean();
      if (mean_abs <= 0)
        throw ValidationError("profile column " + std::to_string(m + 1) + " is all zero");
      ps.p.col(m) = -spec.load_scale / mean_abs * table.col(m).cwiseAbs();
    }
  } else {
    for (int m = 0; m < load_count; ++m) {
      const double phase = 2.0 * kPi * u01(rng);
      const double step_sigma =
          spec.fluct_sigma * std::sqrt(1.0 - spec.fluct_rho * spec.fluct_rho);
      double g = spec.fluct_sigma * unit(rng);
      for (int t = 0; t < t_count; ++t) {
        if (t > 0) g = spec.fluct_rho * g + step_sigma * unit(rng);
        const double hour =
            std::fmod(static_cast<double>(spec.start_time + t * spec.step_seconds) / 3600.0, 24.0);
        const double shape = 1.0 + spec.daily_amplitude * std::sin(2.0 * kPi * hour / 24.0 + phase);
        ps.p(t, m) = -spec.load_scale * shape * std::exp(g);
      }
    }
  }

  // lagging power factor drawn per reading
  for (int m = 0; m < load_count; ++m)
    for (int t = 0; t < t_count; ++t) {
      const double pf = 0.9 + 0.1 * u01(rng);
      ps.q(t, m) = ps.p(t, m) * std::tan(std::acos(pf));
    }
  return ps;
}

namespace {

// extended-network bookkeeping for one load in nonlinear mode
struct MeterPoint {
  int bus_a = -1;          // magnitude bus (single/three) or first pair bus
  int bus_b = -1;          // second pair bus, -1 otherwise
  bool delta = false;      // power element spans two buses
  bool split_three = false;  // power divides evenly over the phase triple
  int node_bus0 = -1;      // first phase bus of the hosting node (split_three)
};

Mat simulate_linear(const SimulationSpec& spec, const ReducedNetwork& net, const ProfileSet& prof,
                    const Mat& ref_pu) {
  const int m_count = static_cast<int>(net.loads.size());
  const int t_count = spec.samples;

  std::vector<LoadMeta> metas;
  metas.reserve(m_count);
  for (const auto& load : net.loads) metas.push_back(to_meta(load));
  const SensitivityMatrices sm = sensitivities(build_A(assemble_admittance(net)));
  const BlockTables bt = build_block_tables(metas, net.node_count());
  const ReducedSensitivity rs =
      build_reduced_sensitivity(bt, sm.K_node, sm.L_node, sm.K_ang_node, sm.L_ang_node);

  Eigen::VectorXi slots(m_count);
  for (int m = 0; m < m_count; ++m) slots(m) = 3 * m + spec.truth.phase[m];
  const Mat k_sub = rs.Kh(slots, slots);
  const Mat l_sub = rs.Lh(slots, slots);

  Mat v_model = prof.p * k_sub.transpose() + prof.q * l_sub.transpose();
  for (int m = 0; m < m_count; ++m) {
    const int rc = ref_channel(net.loads[m].cls, spec.truth.phase[m]);
    for (int t = 0; t < t_count; ++t) v_model(t, m) += ref_pu(t, rc);
  }
  return v_model;
}

void simulate_nonlinear(const SimulationSpec& spec, const FeederModel& model,
                        const ReducedNetwork& net, const ProfileSet& prof, const Mat& ref_pu,
                        Mat& v_raw) {
  const int m_count = static_cast<int>(model.loads.size());
  const int t_count = spec.samples;
  const int nn = net.node_count() + 1;

  const AdmittanceMatrix adm = assemble_admittance(net);
  int extra = 0;
  for (const auto& load : model.loads)
    if (load.branch >= 0) extra += model.branches[load.branch].kind == PhaseClass::Two ? 2 : 1;

  const int buses = 3 * nn + extra;
  CMat y_ext = CMat::Zero(buses, buses);
  y_ext.topLeftCorner(3 * nn, 3 * nn) = adm.Y;

  std::vector<MeterPoint> meters(m_count);
  std::vector<PqElement> elements;
  std::vector<int> element_of(m_count, -1);  // first element index per load
  int next_bus = 3 * nn;
  for (int m = 0; m < m_count; ++m) {
    const Load& load = model.loads[m];
    const int i = spec.truth.phase[m];
    const int node = load.branch >= 0 ? model.branches[load.branch].node : load.node;
    MeterPoint& mp = meters[m];
    if (load.branch >= 0) {
      const ServiceBranch& br = model.branches[load.branch];
      if (br.kind == PhaseClass::Single) {
        const int pb = i * nn + node;
        const int eb = next_bus++;
        const Complex y = 1.0 / br.z1;
        y_ext(pb, pb) += y;
        y_ext(eb, eb) += y;
        y_ext(pb, eb) -= y;
        y_ext(eb, pb) -= y;
        mp.bus_a = eb;
        element_of[m] = static_cast<int>(elements.size());
        elements.push_back({PqElement::Wye, eb, -1, Complex(0, 0)});
      } else {
        const int pb[2] = {i * nn + node, (i + 1) % 3 * nn + node};
        const int eb[2] = {next_bus, next_bus + 1};
        next_bus += 2;
        const Eigen::Matrix2cd y2 = br.z2.inverse();
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 2; ++c) {
            y_ext(pb[r], pb[c]) += y2(r, c);
            y_ext(eb[r], eb[c]) += y2(r, c);
            y_ext(pb[r], eb[c]) -= y2(r, c);
            y_ext(eb[r], pb[c]) -= y2(r, c);
          }
        mp.bus_a = eb[0];
        mp.bus_b = eb[1];
        mp.delta = true;
        element_of[m] = static_cast<int>(elements.size());
        elements.push_back({PqElement::Delta, eb[0], eb[1], Complex(0, 0)});
      }
    } else if (load.cls == PhaseClass::Single) {
      mp.bus_a = i * nn + node;
      element_of[m] = static_cast<int>(elements.size());
      elements.push_back({PqElement::Wye, mp.bus_a, -1, Complex(0, 0)});
    } else if (load.cls == PhaseClass::Two) {
      mp.bus_a = i * nn + node;
      mp.bus_b = (i + 1) % 3 * nn + node;
      mp.delta = true;
      element_of[m] = static_cast<int>(elements.size());
      elements.push_back({PqElement::Delta, mp.bus_a, mp.bus_b, Complex(0, 0)});
    } else {
      mp.split_three = true;
      mp.node_bus0 = node;  // phase j bus = j * nn + node
      mp.bus_a = i * nn + node;
      element_of[m] = static_cast<int>(elements.size());
      for (int j = 0; j < 3; ++j) elements.push_back({PqElement::Wye, j * nn + node, -1, Complex(0, 0)});
    }
  }

  const std::vector<int> slack = {0, nn, 2 * nn};
  const Complex alpha = std::polar(1.0, -2.0 * kPi / 3.0);
  CVec slack_v(3);

  for (int t = 0; t < t_count; ++t) {
    for (int m = 0; m < m_count; ++m) {
      const Complex s(prof.p(t, m), prof.q(t, m));
      const int e = element_of[m];
      if (meters[m].split_three) {
        for (int j = 0; j < 3; ++j) elements[e + j].s = s / 3.0;
      } else {
        elements[e].s = s;
      }
    }
    slack_v(0) = ref_pu(t, 0);
    slack_v(1) = ref_pu(t, 1) * alpha;
    slack_v(2) = ref_pu(t, 2) * alpha * alpha;
    const CVec v = solve_pq_network(y_ext, slack, slack_v, elements);
    for (int m = 0; m < m_count; ++m) {
      const MeterPoint& mp = meters[m];
      v_raw(t, m) = mp.delta ? std::abs(v(mp.bus_a) - v(mp.bus_b)) : std::abs(v(mp.bus_a));
    }
  }
}

}  // namespace

SimulationResult generate(const SimulationSpec& spec, const FeederModel& model) {
  const int m_count = static_cast<int>(model.loads.size());
  if (static_cast<int>(spec.truth.size()) != m_count)
    throw SimulationError("truth assignment does not cover every load");
  for (int m = 0; m < m_count; ++m)
    if (spec.truth.phase[m] < 0 || spec.truth.phase[m] > 2)
      throw SimulationError("truth phase out of range for load " + model.loads[m].id);
  if (spec.samples < 2) throw SimulationError("need at least two samples");
  if (!(spec.penetration > 0 && spec.penetration <= 1))
    throw SimulationError("penetration must lie in (0, 1]");
  if (spec.noise_class < 0) throw SimulationError("noise_class must be non-negative");
  if (spec.step_seconds <= 0) throw SimulationError("step_seconds must be positive");
  if (spec.substation_sigma < 0) throw SimulationError("substation_sigma must be non-negative");

  const ReducedNetwork net = reduce_network(model);
  const int t_count = spec.samples;
  const ProfileSet prof = synthesize_profiles(spec, m_count);

  // source magnitudes wander slowly; pair channels follow with balanced angles
  Mat ref_pu(t_count, 6);
  {
    auto rng = salted_rng(spec.seed, 2);
    std::normal_distribution<double> nd(0.0, spec.substation_sigma);
    double w[3] = {0.0, 0.0, 0.0};
    for (int t = 0; t < t_count; ++t) {
      if (t > 0)
        for (double& wk : w) wk += nd(rng);
      for (int k = 0; k < 3; ++k) ref_pu(t, k) = 1.0 + w[k];
      fill_pair_channels(ref_pu, t);
    }
  }

  Mat v_raw(t_count, m_count);
  Mat p_raw = prof.p;
  Mat q_raw = prof.q;
  if (spec.mode == SimulationSpec::Mode::Linear) {
    const Mat v_model = simulate_linear(spec, net, prof, ref_pu);
    v_raw = v_model;
    // branch meters see the secondary side; reconstruct it so ingestion's
    // reduction lands back on the modeled primary-equivalent pair
    for (int m = 0; m < m_count; ++m) {
      const ReducedLoad& load = net.loads[m];
      if (!load.transform.active) continue;
      for (int t = 0; t < t_count; ++t) {
        const auto [v_meter, s_meter] = invert_reduction(
            load.transform.z_signed, Complex(prof.p(t, m), prof.q(t, m)), v_model(t, m));
        v_raw(t, m) = v_meter;
        p_raw(t, m) = s_meter.real();
        q_raw(t, m) = s_meter.imag();
      }
    }
  } else {
    simulate_nonlinear(spec, model, net, prof, ref_pu, v_raw);
  }

  RawMeasurements raw;
  raw.times.resize(t_count);
  for (int t = 0; t < t_count; ++t) raw.times[t] = spec.start_time + t * spec.step_seconds;
  raw.load_ids.reserve(m_count);
  for (const auto& load : model.loads) raw.load_ids.push_back(load.id);
  const double kw = net.base_power_va / 1000.0;
  raw.v = v_raw * net.base_voltage_v;
  raw.p = p_raw * kw;
  raw.q = q_raw * kw;
  raw.sub = ref_pu * net.base_voltage_v;

  if (spec.noise_class > 0) {
    auto rng = salted_rng(spec.seed, 3);
    const bool cumulative = spec.noise_placement == SimulationSpec::NoisePlacement::Cumulative;
    auto corrupt = [&](auto&& column, double sigma) {
      std::normal_distribution<double> nd(0.0, sigma);
      double walk = 0.0;
      for (int t = 0; t < t_count; ++t) {
        const double e = nd(rng);
        walk = cumulative ? walk + e : e;
        column(t) += walk;
      }
    };
    const double sigma_v = spec.noise_class * net.base_voltage_v / 3.0;
    for (int m = 0; m < m_count; ++m) corrupt(raw.v.col(m), sigma_v);
    for (int m = 0; m < m_count; ++m) {
      const double nominal =
          (raw.p.col(m).array().square() + raw.q.col(m).array().square()).sqrt().mean();
      const double sigma_s = spec.noise_class * nominal / 3.0;
      corrupt(raw.p.col(m), sigma_s);
      corrupt(raw.q.col(m), sigma_s);
    }
    for (int c = 0; c < 6; ++c) corrupt(raw.sub.col(c), sigma_v);
  }

  if (spec.quantize) {
    auto snap = [](double x, double q) { return q > 0 ? std::round(x / q) * q : x; };
    for (int m = 0; m < m_count; ++m) {
      const double qv = net.loads[m].secondary ? spec.quant_v_secondary : spec.quant_v_primary;
      for (int t = 0; t < t_count; ++t) {
        raw.v(t, m) = snap(raw.v(t, m), qv);
        raw.p(t, m) = snap(raw.p(t, m), spec.quant_pq);
        raw.q(t, m) = snap(raw.q(t, m), spec.quant_pq);
      }
    }
    for (int c = 0; c < 6; ++c)
      for (int t = 0; t < t_count; ++t) raw.sub(t, c) = snap(raw.sub(t, c), spec.quant_v_primary);
  }

  if (spec.penetration < 1.0) {
    const std::vector<std::string> kept =
        select_metered_loads(raw.load_ids, spec.penetration, spec.seed);
    std::vector<int> cols;
    cols.reserve(kept.size());
    for (int m = 0, k = 0; m < m_count && k < static_cast<int>(kept.size()); ++m)
      if (raw.load_ids[m] == kept[k]) {
        cols.push_back(m);
        ++k;
      }
    RawMeasurements thin;
    thin.times = raw.times;
    thin.sub = raw.sub;
    thin.load_ids = kept;
    const int keep = static_cast<int>(cols.size());
    thin.v.resize(t_count, keep);
    thin.p.resize(t_count, keep);
    thin.q.resize(t_count, keep);
    for (int k = 0; k < keep; ++k) {
      thin.v.col(k) = raw.v.col(cols[k]);
      thin.p.col(k) = raw.p.col(cols[k]);
      thin.q.col(k) = raw.q.col(cols[k]);
    }
    raw = std::move(thin);
  }

  SimulationResult result;
  result.raw = std::move(raw);
  for (int m = 0; m < m_count; ++m)
    result.truth.entries.emplace_back(model.loads[m].id,
                                      phase_label(model.loads[m].cls, spec.truth.phase[m]));
  return result;
}

ReducedNetwork perturb_model(const ReducedNetwork& net, const PerturbationSpec& spec) {
  if (spec.fraction < 0) throw ValidationError("perturbation fraction must be non-negative");
  ReducedNetwork out = net;

  if (spec.fraction > 0) {
    auto rng = salted_rng(spec.seed, 5);
    std::normal_distribution<double> nd(0.0, spec.fraction / 3.0);
    for (auto& line : out.lines) {
      Eigen::FullPivLU<Eigen::Matrix3cd> lu(line.z);
      if (!lu.isInvertible())
        throw ValidationError("perturb_model: singular impedance block");
      const Eigen::Matrix3cd y = lu.inverse();
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 50)
          throw SimulationError("perturb_model: could not keep a line block invertible");
        Eigen::Matrix3cd y_pert;
        for (int r = 0; r < 3; ++r)
          for (int c = r; c < 3; ++c) {
            const double eps = nd(rng);
            y_pert(r, c) = y(r, c) * (1.0 + eps);
            if (c != r) y_pert(c, r) = y(c, r) * (1.0 + eps);
          }
        Eigen::FullPivLU<Eigen::Matrix3cd> lu_pert(y_pert);
        if (!lu_pert.isInvertible()) continue;
        line.z = lu_pert.inverse();
        break;
      }
    }
  }

  for (const auto& bid : spec.missing_branches) {
    bool found = false;
    for (auto& load : out.loads)
      if (load.transform.active && load.transform.branch_id == bid) {
        load.transform.active = false;
        found = true;
      }
    if (!found) throw ValidationError("perturb_model: no load uses branch '" + bid + "'");
  }
  return out;
}

std::vector<std::string> select_metered_loads(const std::vector<std::string>& ids,
                                              double penetration, std::uint64_t seed) {
  if (!(penetration > 0 && penetration <= 1))
    throw ValidationError("penetration must lie in (0, 1]");
  const int m_count = static_cast<int>(ids.size());
  if (m_count == 0) return {};
  const int keep = std::min(
      m_count, std::max(1, static_cast<int>(std::ceil(penetration * m_count - 1e-9))));
  std::vector<int> idx(m_count);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = salted_rng(seed, 4);
  std::shuffle(idx.begin(), idx.end(), rng);  // same seed => nested subsets across levels
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  out.reserve(keep);
  for (int k : idx) out.push_back(ids[k]);
  return out;
}

}  // namespace phaseid
