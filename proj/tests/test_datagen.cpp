#include <array>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "paramixer/datagen.hpp"

using namespace paramixer;

TEST_CASE("adding target and the correctness rule") {
  CHECK(adding_target(0.5, 0.6) == 0.775);
  CHECK(adding_target(0.0, 0.0) == 0.5);
  CHECK(adding_target(-1.0, -1.0) == 0.0);
  CHECK(adding_target(1.0, 1.0) == 1.0);
  CHECK(adding_correct(0.5, 0.5));
  CHECK_FALSE(adding_correct(0.5, 0.541));
  CHECK_FALSE(adding_correct(0.0, 0.04));  // difference is exactly the threshold
  CHECK_FALSE(adding_correct(0.5, 0.54));
  CHECK(adding_correct(0.5, 0.5399));
  CHECK(adding_correct(0.5, 0.4601));
}

TEST_CASE("temporal order labels") {
  auto parse = [](std::string_view s) {
    std::vector<std::int32_t> out;
    for (char c : s) out.push_back(symbol_from_char(c));
    return out;
  };
  CHECK(temporal_order_label(parse("adYcbaYcd")) == 3);
  CHECK(temporal_order_label(parse("XabcX")) == 0);
  CHECK(temporal_order_label(parse("aXbYc")) == 1);
  CHECK(temporal_order_label(parse("YX")) == 2);
  CHECK_THROWS_AS(temporal_order_label(parse("abcX")), DatasetError);
  CHECK_THROWS_AS(temporal_order_label(parse("XXY")), DatasetError);
  CHECK_THROWS_AS(symbol_from_char('e'), DatasetError);
  for (std::int32_t s = 0; s < kTemporalOrderVocab; ++s) CHECK(symbol_from_char(symbol_char(s)) == s);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS((DatasetSpec{SyntheticTask::adding, 1, 10, 0}.validate()), DatasetError);
  CHECK_THROWS_AS((DatasetSpec{SyntheticTask::temporal_order, 8, 0, 0}.validate()), DatasetError);
  const DatasetSpec spec{SyntheticTask::adding, 8, 10, 0};
  CHECK_THROWS_AS(generate(spec, 10), DatasetError);
  CHECK_THROWS_AS(generate(spec, -1), DatasetError);
  CHECK_THROWS_AS(gen_temporal_order(spec, 0), DatasetError);
  CHECK(parse_synthetic_task(to_string(SyntheticTask::temporal_order)) == SyntheticTask::temporal_order);
}

TEST_CASE("samples are pure functions of (seed, index)") {
  for (auto task : {SyntheticTask::adding, SyntheticTask::temporal_order}) {
    const DatasetSpec spec{task, 64, 100, 17};
    for (std::int64_t i : {0, 1, 57, 99}) {
      const auto a = generate(spec, i);
      const auto b = generate(spec, i);
      CHECK(a.symbols == b.symbols);
      CHECK(a.markers == b.markers);
      CHECK(a.label == b.label);
      REQUIRE(a.values.size() == b.values.size());
      CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0);
      CHECK(std::memcmp(&a.target, &b.target, sizeof(double)) == 0);
    }
    // A larger count does not change earlier samples.
    CHECK(generate(DatasetSpec{task, 64, 1000, 17}, 5).values == generate(spec, 5).values);
    const auto other = generate(DatasetSpec{task, 64, 100, 18}, 5);
    CHECK((other.symbols != generate(spec, 5).symbols || other.values != generate(spec, 5).values));
  }
}

TEST_CASE("adding structure and statistics") {
  const DatasetSpec spec{SyntheticTask::adding, 32, 100000, 3};
  double mean = 0.0;
  std::array<std::int64_t, 32> position_hits{};
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto s = gen_adding(spec, i);
    REQUIRE(s.values.size() == 32);
    REQUIRE(s.markers.size() == 32);
    std::vector<std::size_t> marked;
    for (std::size_t t = 0; t < 32; ++t) {
      CHECK_MESSAGE((s.values[t] >= -1.0 && s.values[t] <= 1.0), "value out of range");
      if (s.markers[t] == 1) marked.push_back(t);
      else REQUIRE(s.markers[t] == 0);
    }
    REQUIRE(marked.size() == 2);
    ++position_hits[marked[0]];
    ++position_hits[marked[1]];
    REQUIRE(s.target == 0.5 + (s.values[marked[0]] + s.values[marked[1]]) / 4);
    REQUIRE(s.target >= 0.0);
    REQUIRE(s.target <= 1.0);
    mean += s.target;
  }
  mean /= static_cast<double>(spec.count);
  CHECK(std::abs(mean - 0.5) < 0.01);
  // No locality restriction: every position carries a signal about 2/32 of the time.
  for (auto hits : position_hits) CHECK(std::abs(static_cast<double>(hits) / 100000.0 - 2.0 / 32) < 0.005);
}

TEST_CASE("temporal order structure and statistics") {
  const DatasetSpec spec{SyntheticTask::temporal_order, 32, 100000, 4};
  std::array<std::int64_t, 4> classes{};
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto s = gen_temporal_order(spec, i);
    REQUIRE(s.symbols.size() == 32);
    int signals = 0;
    for (auto sym : s.symbols) {
      REQUIRE(sym >= 0);
      REQUIRE(sym < kTemporalOrderVocab);
      if (sym >= kSymbolX) ++signals;
    }
    REQUIRE(signals == 2);
    REQUIRE(s.label == temporal_order_label(s.symbols));
    ++classes[static_cast<std::size_t>(s.label)];
  }
  for (auto c : classes) CHECK(std::abs(static_cast<double>(c) / 100000.0 - 0.25) < 0.01);
}

TEST_CASE("shortest sequences") {
  const auto a = gen_adding(DatasetSpec{SyntheticTask::adding, 2, 50, 1}, 49);
  CHECK(a.markers == std::vector<std::uint8_t>{1, 1});
  const auto t = gen_temporal_order(DatasetSpec{SyntheticTask::temporal_order, 2, 50, 1}, 49);
  CHECK(t.symbols[0] >= kSymbolX);
  CHECK(t.symbols[1] >= kSymbolX);
}

TEST_CASE("batches") {
  std::vector<SyntheticSample> samples;
  const DatasetSpec spec{SyntheticTask::adding, 8, 3, 2};
  for (std::int64_t i = 0; i < 3; ++i) samples.push_back(generate(spec, i));
  const auto batch = make_batch(samples);
  CHECK(batch.inputs.size == 3);
  CHECK(batch.inputs.length == 8);
  CHECK(batch.inputs.pairs.size() == 48);
  CHECK(batch.inputs.pairs[2 * 8 * 2 + 2 * 5] == samples[2].values[5]);
  CHECK(batch.inputs.pairs[2 * 8 * 2 + 2 * 5 + 1] == samples[2].markers[5]);
  CHECK(batch.targets[1] == samples[1].target);
}

TEST_CASE("export format") {
  std::ostringstream out;
  const DatasetSpec spec{SyntheticTask::adding, 4, 1, 9};
  write_dataset(out, spec);
  std::istringstream in(out.str());
  std::string header;
  std::string line;
  std::getline(in, header);
  std::getline(in, line);
  std::string rest;
  CHECK_FALSE(std::getline(in, rest));
  const auto meta = nlohmann::json::parse(header);
  CHECK(meta["N"] == 4);
  CHECK(meta["count"] == 1);
  CHECK(meta["seed"] == 9);
  std::vector<double> fields;
  std::stringstream cells(line);
  std::string cell;
  while (std::getline(cells, cell, ',')) fields.push_back(std::stod(cell));
  REQUIRE(fields.size() == 9);
  double signal_sum = 0;
  for (int t = 0; t < 4; ++t)
    if (fields[2 * t + 1] == 1.0) signal_sum += fields[2 * t];
  CHECK(fields[8] == 0.5 + signal_sum / 4);
  CHECK(fields[8] == gen_adding(spec, 0).target);

  std::ostringstream to;
  write_dataset(to, DatasetSpec{SyntheticTask::temporal_order, 6, 2, 9});
  std::istringstream tin(to.str());
  std::getline(tin, header);
  std::getline(tin, line);
  CHECK(line.size() == 8);
  CHECK(line[6] == ',');
  CHECK(line.substr(7) == std::to_string(gen_temporal_order(DatasetSpec{SyntheticTask::temporal_order, 6, 2, 9}, 0).label));
}
