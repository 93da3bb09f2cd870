#include "phaseid/feeder.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace phaseid {

using nlohmann::json;

std::string phase_label(PhaseClass cls, int i) {
  static const char* single[] = {"A", "B", "C"};
  static const char* pair[] = {"AB", "BC", "CA"};
  if (i < 0 || i > 2) throw ValidationError("phase index out of range");
  return cls == PhaseClass::Two ? pair[i] : single[i];
}

int phase_index(PhaseClass cls, const std::string& label) {
  for (int i = 0; i < 3; ++i)
    if (label == phase_label(cls, i)) return i;
  throw ValidationError("unknown phase label '" + label + "' for class " + class_label(cls));
}

std::string class_label(PhaseClass cls) {
  switch (cls) {
    case PhaseClass::Single: return "single";
    case PhaseClass::Two: return "two";
    case PhaseClass::Three: return "three";
  }
  return "?";
}

PhaseClass class_from_label(const std::string& label) {
  if (label == "single") return PhaseClass::Single;
  if (label == "two") return PhaseClass::Two;
  if (label == "three") return PhaseClass::Three;
  throw ValidationError("unknown load class '" + label + "'");
}

namespace {

Complex parse_complex(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ValidationError(where + ": expected [re, im]");
  Complex z(j[0].get<double>(), j[1].get<double>());
  if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
    throw ValidationError(where + ": nonfinite impedance");
  return z;
}

std::string id_string(const json& j, const std::string& where) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number()) return j.dump();
  throw ValidationError(where + ": identifier must be a string or number");
}

}  // namespace

FeederModel parse_feeder(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("feeder JSON: ") + e.what());
  }

  FeederModel model;
  if (!root.contains("base_voltage_v") || !root["base_voltage_v"].is_number())
    throw ValidationError("base_voltage_v: missing or not a number");
  if (!root.contains("base_power_va") || !root["base_power_va"].is_number())
    throw ValidationError("base_power_va: missing or not a number");
  model.base_voltage_v = root["base_voltage_v"].get<double>();
  model.base_power_va = root["base_power_va"].get<double>();
  if (!(model.base_voltage_v > 0) || !std::isfinite(model.base_voltage_v))
    throw ValidationError("base_voltage_v: must be positive and finite");
  if (!(model.base_power_va > 0) || !std::isfinite(model.base_power_va))
    throw ValidationError("base_power_va: must be positive and finite");
  const double z_base = model.z_base();

  if (!root.contains("nodes") || !root["nodes"].is_array() || root["nodes"].size() < 2)
    throw ValidationError("nodes: need the substation plus at least one node");
  std::map<std::string, int> node_index;
  for (const auto& jn : root["nodes"]) {
    if (!jn.is_object() || !jn.contains("id")) throw ValidationError("nodes[]: missing id");
    std::string id = id_string(jn["id"], "nodes[].id");
    if (node_index.count(id)) throw ValidationError("nodes: duplicate id '" + id + "'");
    node_index[id] = static_cast<int>(model.node_ids.size());
    model.node_ids.push_back(id);
  }

  auto node_ref = [&](const json& j, const std::string& where) {
    std::string id = id_string(j, where);
    auto it = node_index.find(id);
    if (it == node_index.end()) throw ValidationError(where + ": unknown node '" + id + "'");
    return it->second;
  };

  if (!root.contains("lines") || !root["lines"].is_array() || root["lines"].empty())
    throw ValidationError("lines: at least one line section required");
  for (const auto& jl : root["lines"]) {
    LineSection line;
    if (!jl.contains("from") || !jl.contains("to") || !jl.contains("z_ohm"))
      throw ValidationError("lines[]: need from, to, z_ohm");
    line.from = node_ref(jl["from"], "lines[].from");
    line.to = node_ref(jl["to"], "lines[].to");
    if (line.from == line.to) throw ValidationError("lines[]: from == to");
    const json& z = jl["z_ohm"];
    if (!z.is_array() || z.size() != 3) throw ValidationError("lines[].z_ohm: expected 3x3 block");
    for (int r = 0; r < 3; ++r) {
      if (!z[r].is_array() || z[r].size() != 3)
        throw ValidationError("lines[].z_ohm: expected 3x3 block");
      for (int c = 0; c < 3; ++c) line.z(r, c) = parse_complex(z[r][c], "lines[].z_ohm") / z_base;
    }
    model.lines.push_back(line);
  }

  std::map<std::string, int> branch_index;
  if (root.contains("service_branches")) {
    if (!root["service_branches"].is_array()) throw ValidationError("service_branches: expected array");
    for (const auto& jb : root["service_branches"]) {
      ServiceBranch br;
      if (!jb.contains("id") || !jb.contains("node") || !jb.contains("kind") || !jb.contains("z_ohm"))
        throw ValidationError("service_branches[]: need id, node, kind, z_ohm");
      br.id = id_string(jb["id"], "service_branches[].id");
      if (branch_index.count(br.id))
        throw ValidationError("service_branches: duplicate id '" + br.id + "'");
      br.node = node_ref(jb["node"], "service_branches[].node");
      if (br.node == 0)
        throw ValidationError("service_branches[" + br.id + "]: cannot attach to the substation");
      std::string kind = jb["kind"].get<std::string>();
      const json& z = jb["z_ohm"];
      if (kind == "single") {
        br.kind = PhaseClass::Single;
        br.z1 = parse_complex(z, "service_branches[].z_ohm") / z_base;
      } else if (kind == "two") {
        br.kind = PhaseClass::Two;
        if (!z.is_array() || z.size() != 2 || !z[0].is_array() || z[0].size() != 2)
          throw ValidationError("service_branches[" + br.id + "].z_ohm: expected 2x2 block");
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 2; ++c)
            br.z2(r, c) = parse_complex(z[r][c], "service_branches[].z_ohm") / z_base;
      } else {
        throw ValidationError("service_branches[" + br.id + "].kind: must be 'single' or 'two'");
      }
      branch_index[br.id] = static_cast<int>(model.branches.size());
      model.branches.push_back(br);
    }
  }

  if (!root.contains("loads") || !root["loads"].is_array() || root["loads"].empty())
    throw ValidationError("loads: at least one load required");
  std::set<std::string> load_ids;
  std::map<int, std::string> branch_claimed;
  for (const auto& jl : root["loads"]) {
    Load load;
    if (!jl.contains("id") || !jl.contains("class")) throw ValidationError("loads[]: need id and class");
    load.id = id_string(jl["id"], "loads[].id");
    if (!load_ids.insert(load.id).second)
      throw ValidationError("loads: duplicate id '" + load.id + "'");
    load.cls = class_from_label(jl["class"].get<std::string>());
    const bool has_node = jl.contains("node");
    const bool has_branch = jl.contains("branch");
    if (has_node == has_branch)
      throw ValidationError("loads[" + load.id + "]: exactly one of node or branch required");
    if (has_node) {
      load.node = node_ref(jl["node"], "loads[].node");
      if (load.node == 0)
        throw ValidationError("loads[" + load.id + "]: cannot attach to the substation");
    } else {
      std::string bid = id_string(jl["branch"], "loads[].branch");
      auto it = branch_index.find(bid);
      if (it == branch_index.end())
        throw ValidationError("loads[" + load.id + "]: unknown branch '" + bid + "'");
      load.branch = it->second;
      const ServiceBranch& br = model.branches[load.branch];
      if (br.kind != load.cls)
        throw ValidationError("loads[" + load.id + "]: class '" + class_label(load.cls) +
                              "' does not match branch kind '" + class_label(br.kind) + "'");
      auto claimed = branch_claimed.find(load.branch);
      if (claimed != branch_claimed.end())
        throw ValidationError("loads[" + load.id + "]: branch '" + bid + "' already hosts load '" +
                              claimed->second + "'");
      branch_claimed[load.branch] = load.id;
    }
    model.loads.push_back(load);
  }

  // connectivity over line sections
  const int n_total = static_cast<int>(model.node_ids.size());
  std::vector<std::vector<int>> adj(n_total);
  for (const auto& line : model.lines) {
    adj[line.from].push_back(line.to);
    adj[line.to].push_back(line.from);
  }
  std::vector<char> seen(n_total, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        stack.push_back(v);
      }
  }
  for (int u = 0; u < n_total; ++u)
    if (!seen[u])
      throw ValidationError("nodes: '" + model.node_ids[u] + "' is not connected to the substation");

  return model;
}

FeederModel parse_feeder_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open feeder file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_feeder(ss.str());
}

std::pair<double, Complex> apply_reduction(Complex z_signed, Complex S, double v) {
  if (!(v > 0)) throw ValidationError("branch reduction: nonpositive voltage magnitude");
  const double amp = std::abs(S) / v;
  const Complex zeta = z_signed * amp * std::polar(1.0, -std::arg(S));
  const double v_eq = std::abs(Complex(v, 0.0) + zeta);
  const Complex s_eq = S + z_signed * amp * amp;
  return {v_eq, s_eq};
}

std::pair<double, Complex> reduce_single_phase_branch(Complex z, Complex S, double v) {
  return apply_reduction(-z, S, v);
}

std::pair<double, Complex> reduce_two_phase_branch(const Eigen::Matrix2cd& z, Complex S, double v12) {
  const Complex z_sum = z(0, 1) + z(1, 0) - z(0, 0) - z(1, 1);
  return apply_reduction(z_sum, S, v12);
}

std::pair<double, Complex> invert_reduction(Complex z_signed, Complex S_eq, double v_eq) {
  if (!(v_eq > 0)) throw ValidationError("branch reduction: nonpositive voltage magnitude");
  double v = v_eq;
  Complex S = S_eq;
  for (int it = 0; it < 60; ++it) {
    const double amp = std::abs(S) / v;
    const Complex S_new = S_eq - z_signed * amp * amp;
    const Complex zeta = z_signed * amp * std::polar(1.0, -std::arg(S_new));
    const double disc = v_eq * v_eq - zeta.imag() * zeta.imag();
    if (!(disc > 0))
      throw SolverError("branch reduction not invertible at this sample (branch drop too large)");
    const double v_new = -zeta.real() + std::sqrt(disc);
    if (!(v_new > 0))
      throw SolverError("branch reduction not invertible at this sample (voltage collapsed)");
    const double delta = std::abs(v_new - v) + std::abs(S_new - S);
    v = v_new;
    S = S_new;
    if (delta < 1e-15 * (1.0 + v_eq + std::abs(S_eq))) break;
  }
  return {v, S};
}

ReducedNetwork reduce_network(const FeederModel& model) {
  ReducedNetwork net;
  net.base_voltage_v = model.base_voltage_v;
  net.base_power_va = model.base_power_va;
  net.node_ids = model.node_ids;
  net.lines = model.lines;
  net.loads.reserve(model.loads.size());
  for (const auto& load : model.loads) {
    ReducedLoad rl;
    rl.id = load.id;
    rl.cls = load.cls;
    if (load.branch < 0) {
      rl.node = load.node;
    } else {
      const ServiceBranch& br = model.branches[load.branch];
      rl.node = br.node;
      rl.secondary = true;
      rl.transform.active = true;
      rl.transform.branch_id = br.id;
      rl.transform.z_signed = br.kind == PhaseClass::Single
                                  ? -br.z1
                                  : br.z2(0, 1) + br.z2(1, 0) - br.z2(0, 0) - br.z2(1, 1);
    }
    net.loads.push_back(std::move(rl));
  }
  return net;
}

AdmittanceMatrix assemble_admittance(const ReducedNetwork& net) {
  const int nn = static_cast<int>(net.node_ids.size());  // N + 1
  AdmittanceMatrix adm;
  adm.node_count = nn - 1;
  adm.Y = CMat::Zero(3 * nn, 3 * nn);
  for (const auto& line : net.lines) {
    Eigen::FullPivLU<Eigen::Matrix3cd> lu(line.z);
    if (!lu.isInvertible())
      throw ValidationError("lines[" + net.node_ids[line.from] + "-" + net.node_ids[line.to] +
                            "]: singular 3x3 impedance block");
    // the inverse of a symmetric block picks up roundoff asymmetry; fold it
    // back so the assembled matrix is symmetric to the bit
    const Eigen::Matrix3cd yi = lu.inverse();
    const Eigen::Matrix3cd y = 0.5 * (yi + yi.transpose());
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int fu = i * nn + line.from, fv = j * nn + line.from;
        const int tu = i * nn + line.to, tv = j * nn + line.to;
        adm.Y(fu, fv) += y(i, j);
        adm.Y(tu, tv) += y(i, j);
        adm.Y(fu, tv) -= y(i, j);
        adm.Y(tu, fv) -= y(i, j);
      }
  }
  return adm;
}

}  // namespace phaseid
