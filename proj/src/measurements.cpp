#include "phaseid/measurements.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace phaseid {

namespace {

// civil <-> unix-day conversions (proleptic Gregorian)
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

const char* kSubIds[6] = {"__substation__a",  "__substation__b",  "__substation__c",
                          "__substation__ab", "__substation__bc", "__substation__ca"};

int substation_channel(const std::string& id) {
  for (int c = 0; c < 6; ++c)
    if (id == kSubIds[c]) return c;
  return -1;
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double parse_double(const std::string& s, const char* what) {
  const char* p = s.c_str();
  char* end = nullptr;
  const double x = std::strtod(p, &end);
  if (end == p || *end != '\0') throw ValidationError(std::string("bad ") + what + " '" + s + "'");
  return x;
}

}  // namespace

std::int64_t parse_iso8601(const std::string& s) {
  int y, mo, d, h, mi, se;
  char tail = '\0';
  const int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d%c", &y, &mo, &d, &h, &mi, &se, &tail);
  if (n < 6 || (n == 7 && tail != 'Z'))
    throw ValidationError("bad timestamp '" + s + "' (want YYYY-MM-DDTHH:MM:SSZ)");
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || se < 0 ||
      se > 60)
    throw ValidationError("timestamp field out of range in '" + s + "'");
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

std::string format_iso8601(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d,
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return buf;
}

std::string write_measurement_csv(const RawMeasurements& raw) {
  const int t_count = static_cast<int>(raw.times.size());
  const int m_count = static_cast<int>(raw.load_ids.size());
  if (raw.v.rows() != t_count || raw.v.cols() != m_count || raw.p.rows() != t_count ||
      raw.q.rows() != t_count || raw.sub.rows() != t_count || raw.sub.cols() != 6)
    throw ValidationError("write_measurement_csv: inconsistent table shapes");

  std::string out = "time,load_id,v,p,q\n";
  for (int t = 0; t < t_count; ++t) {
    const std::string ts = format_iso8601(raw.times[t]);
    for (int c = 0; c < 6; ++c)
      out += ts + ',' + kSubIds[c] + ',' + fmt_double(raw.sub(t, c)) + ",0,0\n";
    for (int m = 0; m < m_count; ++m)
      out += ts + ',' + raw.load_ids[m] + ',' + fmt_double(raw.v(t, m)) + ',' +
             fmt_double(raw.p(t, m)) + ',' + fmt_double(raw.q(t, m)) + '\n';
  }
  return out;
}

RawMeasurements parse_measurement_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty measurement file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time,load_id,v,p,q")
    throw ValidationError("unexpected measurement header '" + line + "'");

  struct Record {
    double v, p, q;
  };
  // (time, id) -> record; map keeps times sorted
  std::map<std::int64_t, std::unordered_map<std::string, Record>> table;
  std::vector<std::string> load_order;
  std::unordered_set<std::string> seen_loads;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 5> field;
    size_t pos = 0;
    for (int f = 0; f < 5; ++f) {
      const size_t next = line.find(',', pos);
      if ((next == std::string::npos) != (f == 4))
        throw ValidationError("line " + std::to_string(line_no) + ": expected 5 fields");
      field[f] = line.substr(pos, next == std::string::npos ? next : next - pos);
      pos = next + 1;
    }
    std::int64_t t;
    if (field[0].find('T') != std::string::npos) {
      t = parse_iso8601(field[0]);
    } else {
      char* end = nullptr;
      t = std::strtoll(field[0].c_str(), &end, 10);
      if (end == field[0].c_str() || *end != '\0')
        throw ValidationError("line " + std::to_string(line_no) + ": bad time '" + field[0] + "'");
    }
    const std::string& id = field[1];
    if (id.empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty load id");
    Record rec{parse_double(field[2], "v"), parse_double(field[3], "p"),
               parse_double(field[4], "q")};
    auto [it, fresh] = table[t].emplace(id, rec);
    if (!fresh)
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate sample for '" + id +
                            "' at " + field[0]);
    if (substation_channel(id) < 0 && seen_loads.insert(id).second) load_order.push_back(id);
  }
  if (load_order.empty()) throw ValidationError("measurement file has no load channels");

  // keep only timestamps where every channel is present
  std::vector<std::int64_t> times;
  for (const auto& [t, recs] : table) {
    bool complete = true;
    for (int c = 0; c < 6 && complete; ++c) complete = recs.count(kSubIds[c]) > 0;
    for (const auto& id : load_order)
      if (complete) complete = recs.count(id) > 0;
    if (complete) times.push_back(t);
  }
  if (times.empty())
    throw ValidationError("no timestamp has all load and substation channels present");

  RawMeasurements raw;
  raw.times = times;
  raw.load_ids = load_order;
  const int t_count = static_cast<int>(times.size());
  const int m_count = static_cast<int>(load_order.size());
  raw.v.resize(t_count, m_count);
  raw.p.resize(t_count, m_count);
  raw.q.resize(t_count, m_count);
  raw.sub.resize(t_count, 6);
  for (int t = 0; t < t_count; ++t) {
    const auto& recs = table[times[t]];
    for (int c = 0; c < 6; ++c) raw.sub(t, c) = recs.at(kSubIds[c]).v;
    for (int m = 0; m < m_count; ++m) {
      const Record& r = recs.at(load_order[m]);
      raw.v(t, m) = r.v;
      raw.p(t, m) = r.p;
      raw.q(t, m) = r.q;
    }
  }
  return raw;
}

MeasurementSet to_measurement_set(const RawMeasurements& raw, const ReducedNetwork& net,
                                  bool flip_sign) {
  if (net.base_voltage_v <= 0 || net.base_power_va <= 0)
    throw ValidationError("network is missing positive bases");
  const int t_count = static_cast<int>(raw.times.size());
  if (t_count == 0) throw ValidationError("measurement table is empty");

  std::unordered_map<std::string, int> raw_col;
  for (int m = 0; m < static_cast<int>(raw.load_ids.size()); ++m)
    raw_col[raw.load_ids[m]] = m;

  // canonical load order follows the network; absent meters are dropped
  MeasurementSet ms;
  std::vector<int> src_col;
  std::vector<const ReducedLoad*> src_load;
  for (const auto& load : net.loads) {
    auto it = raw_col.find(load.id);
    if (it == raw_col.end()) continue;
    ms.loads.push_back(to_meta(load));
    src_col.push_back(it->second);
    src_load.push_back(&load);
    raw_col.erase(it);
  }
  if (!raw_col.empty()) {
    std::string unknown;
    for (const auto& [id, c] : raw_col)
      if (unknown.empty() || id < unknown) unknown = id;
    throw ValidationError("measurement load '" + unknown + "' is not in the network");
  }
  if (ms.loads.empty()) throw ValidationError("no measured load matches the network");

  const int m_count = static_cast<int>(ms.loads.size());
  const double sign = flip_sign ? -1.0 : 1.0;
  const double p_scale = sign * 1000.0 / net.base_power_va;

  Mat v(t_count, m_count), p(t_count, m_count), q(t_count, m_count);
  for (int c = 0; c < m_count; ++c) {
    const ReducedLoad& load = *src_load[c];
    const int rc = src_col[c];
    for (int t = 0; t < t_count; ++t) {
      double v_pu = raw.v(t, rc) / net.base_voltage_v;
      Complex s(raw.p(t, rc) * p_scale, raw.q(t, rc) * p_scale);
      if (!(v_pu > 0))
        throw ValidationError("non-positive voltage for '" + load.id + "' at " +
                              format_iso8601(raw.times[t]));
      if (load.transform.active) {
        auto [v_eq, s_eq] = apply_reduction(load.transform.z_signed, s, v_pu);
        v_pu = v_eq;
        s = s_eq;
      }
      v(t, c) = v_pu;
      p(t, c) = s.real();
      q(t, c) = s.imag();
    }
  }
  Mat ref = raw.sub / net.base_voltage_v;

  // segment boundaries wherever the time step departs from the modal step
  std::vector<std::int64_t> steps;
  for (int t = 1; t < t_count; ++t) {
    const std::int64_t dt = raw.times[t] - raw.times[t - 1];
    if (dt <= 0) throw ValidationError("timestamps must be strictly increasing");
    steps.push_back(dt);
  }
  std::int64_t modal = 1;
  if (!steps.empty()) {
    std::map<std::int64_t, int> hist;
    for (auto s : steps) ++hist[s];
    int best = 0;
    for (const auto& [s, n] : hist)
      if (n > best) {
        best = n;
        modal = s;
      }
  }

  int start = 0;
  for (int t = 1; t <= t_count; ++t) {
    const bool cut = t == t_count || raw.times[t] - raw.times[t - 1] != modal;
    if (!cut) continue;
    const int len = t - start;
    if (len >= 2) {  // singleton segments carry no differenced information
      MeasurementSegment seg;
      seg.times.assign(raw.times.begin() + start, raw.times.begin() + t);
      seg.v = v.middleRows(start, len);
      seg.p = p.middleRows(start, len);
      seg.q = q.middleRows(start, len);
      seg.ref = ref.middleRows(start, len);
      seg.model_index = 0;
      ms.segments.push_back(std::move(seg));
    }
    start = t;
  }
  if (ms.segments.empty())
    throw ValidationError("no segment with at least two uniformly spaced samples");
  return ms;
}

const std::string* TruthMap::find(const std::string& id) const {
  for (const auto& [key, label] : entries)
    if (key == id) return &label;
  return nullptr;
}

std::string write_truth_json(const TruthMap& truth) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, label] : truth.entries) j[id] = label;
  return j.dump(2) + "\n";
}

TruthMap parse_truth_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("truth file: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("truth file: expected an object");
  TruthMap truth;
  for (const auto& [id, label] : j.items()) {
    if (!label.is_string()) throw ValidationError("truth file: label for '" + id + "' not a string");
    truth.entries.emplace_back(id, label.get<std::string>());
  }
  return truth;
}

void dump_matrix_binary(const Mat& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  const std::int64_t rows = m.rows(), cols = m.cols();
  out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      const double x = m(r, c);
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

void dump_matrix_csv(const Mat& m, const std::string& path) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += fmt_double(m(r, c));
    }
    out += '\n';
  }
  write_file(path, out);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

}  // namespace phaseid
