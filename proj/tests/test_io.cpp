#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "phaseid/feeder.hpp"
#include "phaseid/measurements.hpp"
#include "phaseid/simulate.hpp"

using namespace phaseid;

namespace {

std::string fixture(const char* name) {
  return std::string(PHASEID_FIXTURE_DIR) + "/" + name;
}

RawMeasurements tiny_raw() {
  RawMeasurements raw;
  raw.times = {1704067200, 1704070800, 1704074400};
  raw.load_ids = {"only"};
  raw.v.resize(3, 1);
  raw.v << 2390.5, 2401.25, 2395.125;
  raw.p.resize(3, 1);
  raw.p << -12.5, -13.25, -11.0;
  raw.q.resize(3, 1);
  raw.q << -4.0, -4.5, -3.75;
  raw.sub = Mat::Zero(3, 6);
  raw.sub.col(0).setConstant(2400.0);
  raw.sub.col(1).setConstant(2400.0);
  raw.sub.col(2).setConstant(2400.0);
  raw.sub.col(3).setConstant(2400.0 * 1.7320508);
  raw.sub.col(4).setConstant(2400.0 * 1.7320508);
  raw.sub.col(5).setConstant(2400.0 * 1.7320508);
  return raw;
}

}  // namespace

TEST_CASE("iso timestamps round trip") {
  CHECK(parse_iso8601("1970-01-01T00:00:00Z") == 0);
  CHECK(parse_iso8601("2024-01-01T00:00:00Z") == 1704067200);
  CHECK(format_iso8601(1704067200) == "2024-01-01T00:00:00Z");
  for (std::int64_t t : {0L, 951782400L, 1704067200L, 4102444799L})
    CHECK(parse_iso8601(format_iso8601(t)) == t);
  CHECK_THROWS_AS(parse_iso8601("not a time"), ValidationError);
  CHECK_THROWS_AS(parse_iso8601("2024-13-01T00:00:00Z"), ValidationError);
}

TEST_CASE("measurement csv round trips exactly") {
  RawMeasurements raw = tiny_raw();
  std::string text = write_measurement_csv(raw);
  CHECK(text.rfind("time,load_id,v,p,q", 0) == 0);
  RawMeasurements back = parse_measurement_csv(text);
  REQUIRE(back.times == raw.times);
  REQUIRE(back.load_ids == raw.load_ids);
  CHECK((back.v - raw.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.p - raw.p).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.q - raw.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sub - raw.sub).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("csv parser rejects malformed tables") {
  CHECK_THROWS_AS(parse_measurement_csv("a,b,c\n"), ValidationError);
  std::string text = write_measurement_csv(tiny_raw());
  // duplicate (time, id) row
  auto head_end = text.find('\n') + 1;
  auto first_row = text.substr(head_end, text.find('\n', head_end) + 1 - head_end);
  CHECK_THROWS_AS(parse_measurement_csv(text + first_row), ValidationError);
  CHECK_THROWS_AS(parse_measurement_csv("time,load_id,v,p,q\n"), ValidationError);
}

TEST_CASE("incomplete timestamps are dropped") {
  std::string text = write_measurement_csv(tiny_raw());
  // remove the last line (load channel at the final timestamp)
  auto last = text.rfind('\n', text.size() - 2);
  std::string cut = text.substr(0, last + 1);
  RawMeasurements back = parse_measurement_csv(cut);
  CHECK(back.times.size() == 2);
}

TEST_CASE("conversion to per unit applies scales and sign convention") {
  FeederModel model = parse_feeder_file(fixture("feeder2.json"));
  ReducedNetwork net = reduce_network(model);
  RawMeasurements raw = tiny_raw();
  MeasurementSet ms = to_measurement_set(raw, net);
  REQUIRE(ms.loads.size() == 1);
  REQUIRE(ms.segments.size() == 1);
  const auto& seg = ms.segments[0];
  CHECK(seg.v(0, 0) == doctest::Approx(2390.5 / 2400.0));
  CHECK(seg.p(0, 0) == doctest::Approx(-12.5 * 1000.0 / 500000.0));
  CHECK(seg.ref(0, 0) == doctest::Approx(1.0));
  CHECK(seg.ref(0, 3) == doctest::Approx(1.7320508));
  MeasurementSet flipped = to_measurement_set(raw, net, true);
  CHECK(flipped.segments[0].p(0, 0) == doctest::Approx(12.5 * 1000.0 / 500000.0));
  CHECK(flipped.segments[0].q(0, 0) == doctest::Approx(4.0 * 1000.0 / 500000.0));
}

TEST_CASE("unknown meter ids are rejected, missing meters are allowed") {
  FeederModel model = parse_feeder_file(fixture("feeder_small.json"));
  ReducedNetwork net = reduce_network(model);
  RawMeasurements raw = tiny_raw();  // only "only", which feeder_small lacks
  CHECK_THROWS_AS(to_measurement_set(raw, net), ValidationError);
  raw.load_ids = {"meter2"};  // subset of the feeder's meters is fine
  MeasurementSet ms = to_measurement_set(raw, net);
  CHECK(ms.loads.size() == 1);
  CHECK(ms.loads[0].id == "meter2");
}

TEST_CASE("time gaps split segments and stragglers are dropped") {
  FeederModel model = parse_feeder_file(fixture("feeder2.json"));
  ReducedNetwork net = reduce_network(model);
  RawMeasurements raw = tiny_raw();
  // extend: 3 regular samples, a gap, 2 regular samples, one isolated sample
  raw.times = {0, 3600, 7200, 18000, 21600, 90000};
  raw.v.resize(6, 1);
  raw.v.setConstant(2400.0);
  raw.p = Mat::Constant(6, 1, -10.0);
  raw.q = Mat::Constant(6, 1, -3.0);
  raw.sub = Mat::Constant(6, 6, 2400.0);
  MeasurementSet ms = to_measurement_set(raw, net);
  REQUIRE(ms.segments.size() == 2);
  CHECK(ms.segments[0].times.size() == 3);
  CHECK(ms.segments[1].times.size() == 2);
  CHECK(ms.sample_count() == 5);
}

TEST_CASE("branch loads are mapped through the reduction on ingestion") {
  FeederModel model = parse_feeder_file(fixture("feeder_small.json"));
  ReducedNetwork net = reduce_network(model);
  int behind = -1;
  for (size_t k = 0; k < net.loads.size(); ++k)
    if (net.loads[k].transform.active) behind = static_cast<int>(k);
  REQUIRE(behind >= 0);
  RawMeasurements raw;
  raw.times = {0, 3600};
  raw.load_ids = {net.loads[behind].id};
  raw.v = Mat::Constant(2, 1, 2390.0);
  raw.p = Mat::Constant(2, 1, -20.0);
  raw.q = Mat::Constant(2, 1, -5.0);
  raw.sub = Mat::Constant(2, 6, 2400.0);
  MeasurementSet ms = to_measurement_set(raw, net);
  auto [v_eq, s_eq] = apply_reduction(net.loads[behind].transform.z_signed,
                                      Complex(-20.0, -5.0) * (1000.0 / 500000.0), 2390.0 / 2400.0);
  CHECK(ms.segments[0].v(0, 0) == doctest::Approx(v_eq).epsilon(1e-14));
  CHECK(ms.segments[0].p(0, 0) == doctest::Approx(s_eq.real()).epsilon(1e-14));
  CHECK(ms.segments[0].q(0, 0) == doctest::Approx(s_eq.imag()).epsilon(1e-14));
}

TEST_CASE("truth sidecar round trips") {
  TruthMap truth;
  truth.entries = {{"ld1", "A"}, {"ld2", "BC"}};
  std::string text = write_truth_json(truth);
  TruthMap back = parse_truth_json(text);
  REQUIRE(back.entries.size() == 2);
  CHECK(*back.find("ld1") == "A");
  CHECK(*back.find("ld2") == "BC");
  CHECK(back.find("nope") == nullptr);
  CHECK_THROWS_AS(parse_truth_json("[1,2]"), ValidationError);
}

TEST_CASE("matrix dumps are readable back") {
  Mat m(2, 3);
  m << 1.5, -2.25, 3.0, 0.0, 1e-7, 42.0;
  std::string bin = "/tmp/phaseid_test_matrix.bin";
  std::string csv = "/tmp/phaseid_test_matrix.csv";
  dump_matrix_binary(m, bin);
  dump_matrix_csv(m, csv);

  std::ifstream f(bin, std::ios::binary);
  std::int64_t rows = 0, cols = 0;
  f.read(reinterpret_cast<char*>(&rows), 8);
  f.read(reinterpret_cast<char*>(&cols), 8);
  CHECK(rows == 2);
  CHECK(cols == 3);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double x = 0;
      f.read(reinterpret_cast<char*>(&x), 8);
      CHECK(x == m(r, c));
    }
  std::string text = read_file(csv);
  CHECK(text.find("1.5") != std::string::npos);
  CHECK(text.find("42") != std::string::npos);
  std::remove(bin.c_str());
  std::remove(csv.c_str());
}

TEST_CASE("file helpers round trip and report missing files") {
  std::string path = "/tmp/phaseid_test_file.txt";
  write_file(path, "hello\n");
  CHECK(read_file(path) == "hello\n");
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_file("/tmp/phaseid_does_not_exist_42"), ValidationError);
}
