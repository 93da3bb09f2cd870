#ifndef PHASEID_MEASUREMENTS_HPP
#define PHASEID_MEASUREMENTS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "phaseid/connection.hpp"
#include "phaseid/feeder.hpp"

namespace phaseid {

// Raw meter table in physical units: volts for v, kW / kvar for p and q.
// Rows are complete (every load and all substation channels present at every
// timestamp). sub columns follow RefChannel order.
struct RawMeasurements {
  std::vector<std::int64_t> times;  // unix seconds
  std::vector<std::string> load_ids;
  Mat v, p, q;  // T x M
  Mat sub;      // T x 6
};

// CSV with header "time,load_id,v,p,q". Substation channels use the reserved
// ids __substation__a .. __substation__ca. Timestamps are ISO-8601 UTC.
std::string write_measurement_csv(const RawMeasurements& raw);
RawMeasurements parse_measurement_csv(const std::string& text);

std::int64_t parse_iso8601(const std::string& s);
std::string format_iso8601(std::int64_t t);

// Converts to per unit, applies each load's branch reduction per sample,
// aligns on timestamps and splits at gaps. Loads present in the CSV must
// exist in the network; loads missing from the CSV are simply left out
// (meter dropout). flip_sign negates p and q for consumption-positive data.
MeasurementSet to_measurement_set(const RawMeasurements& raw, const ReducedNetwork& net,
                                  bool flip_sign = false);

// Truth sidecar: {"load_id": "A"|"B"|"C"|"AB"|"BC"|"CA"}.
struct TruthMap {
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* find(const std::string& id) const;
};

std::string write_truth_json(const TruthMap& truth);
TruthMap parse_truth_json(const std::string& text);

// Raw binary (little-endian doubles, row-major) and CSV matrix dumps.
void dump_matrix_binary(const Mat& m, const std::string& path);
void dump_matrix_csv(const Mat& m, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace phaseid

#endif
