#include "paramixer/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "paramixer/random.hpp"

namespace paramixer {

namespace {

// Independent streams per sample field.
enum Field : std::uint64_t { kPositions = 1, kPayload = 2, kSignals = 3 };

SplitMix64 stream(const DatasetSpec& spec, std::int64_t index, Field field) {
  return SplitMix64(counter_hash(spec.seed, static_cast<std::uint64_t>(index), field));
}

std::pair<std::int64_t, std::int64_t> distinct_positions(SplitMix64& rng, std::int64_t n) {
  const auto first = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
  auto second = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - 1)));
  if (second >= first) ++second;
  return {first, second};
}

void check_index(const DatasetSpec& spec, std::int64_t index) {
  spec.validate();
  if (index < 0 || index >= spec.count)
    throw DatasetError("sample index " + std::to_string(index) + " outside [0, " + std::to_string(spec.count) + ")");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(SyntheticTask task) {
  return task == SyntheticTask::adding ? "adding" : "temporal_order";
}

SyntheticTask parse_synthetic_task(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "adding") return SyntheticTask::adding;
  if (lower == "temporal_order" || lower == "temporal-order" || lower == "temporalorder")
    return SyntheticTask::temporal_order;
  throw DatasetError("unknown task '" + std::string(name) + "' (expected adding or temporal_order)");
}

void DatasetSpec::validate() const {
  if (seq_len < 2) throw DatasetError("sequence length must be >= 2, got " + std::to_string(seq_len));
  if (count < 1) throw DatasetError("sample count must be >= 1, got " + std::to_string(count));
}

char symbol_char(std::int32_t symbol) {
  static constexpr char kAlphabet[] = {'a', 'b', 'c', 'd', 'X', 'Y'};
  if (symbol < 0 || symbol >= kTemporalOrderVocab) throw DatasetError("symbol id out of range");
  return kAlphabet[symbol];
}

std::int32_t symbol_from_char(char c) {
  switch (c) {
    case 'a': return 0;
    case 'b': return 1;
    case 'c': return 2;
    case 'd': return 3;
    case 'X': return kSymbolX;
    case 'Y': return kSymbolY;
    default: throw DatasetError(std::string("unknown symbol '") + c + "'");
  }
}

double adding_target(double first, double second) { return 0.5 + (first + second) / 4.0; }

bool adding_correct(double target, double prediction) { return std::abs(target - prediction) < 0.04; }

std::int32_t temporal_order_label(std::int32_t first, std::int32_t second) {
  if ((first != kSymbolX && first != kSymbolY) || (second != kSymbolX && second != kSymbolY))
    throw DatasetError("signal symbols must be X or Y");
  return 2 * (first == kSymbolY ? 1 : 0) + (second == kSymbolY ? 1 : 0);
}

std::int32_t temporal_order_label(const std::vector<std::int32_t>& symbols) {
  std::vector<std::int32_t> signals;
  for (auto s : symbols)
    if (s == kSymbolX || s == kSymbolY) signals.push_back(s);
  if (signals.size() != 2) throw DatasetError("expected exactly two signal symbols, found " + std::to_string(signals.size()));
  return temporal_order_label(signals[0], signals[1]);
}

SyntheticSample gen_adding(const DatasetSpec& spec, std::int64_t index) {
  if (spec.task != SyntheticTask::adding) throw DatasetError("gen_adding called with a non-Adding spec");
  check_index(spec, index);
  const auto n = static_cast<std::size_t>(spec.seq_len);
  SyntheticSample s;
  s.task = SyntheticTask::adding;
  s.values.resize(n);
  s.markers.assign(n, 0);
  auto payload = stream(spec, index, kPayload);
  for (auto& a : s.values) a = payload.uniform(-1.0, 1.0);
  auto positions = stream(spec, index, kPositions);
  const auto [t1, t2] = distinct_positions(positions, spec.seq_len);
  s.markers[static_cast<std::size_t>(t1)] = 1;
  s.markers[static_cast<std::size_t>(t2)] = 1;
  s.target = adding_target(s.values[static_cast<std::size_t>(t1)], s.values[static_cast<std::size_t>(t2)]);
  return s;
}

SyntheticSample gen_temporal_order(const DatasetSpec& spec, std::int64_t index) {
  if (spec.task != SyntheticTask::temporal_order)
    throw DatasetError("gen_temporal_order called with a non-Temporal-Order spec");
  check_index(spec, index);
  SyntheticSample s;
  s.task = SyntheticTask::temporal_order;
  s.symbols.resize(static_cast<std::size_t>(spec.seq_len));
  auto noise = stream(spec, index, kPayload);
  for (auto& sym : s.symbols) sym = static_cast<std::int32_t>(noise.below(4));
  auto positions = stream(spec, index, kPositions);
  const auto [t1, t2] = distinct_positions(positions, spec.seq_len);
  auto signals = stream(spec, index, kSignals);
  s.symbols[static_cast<std::size_t>(t1)] = signals.below(2) == 0 ? kSymbolX : kSymbolY;
  s.symbols[static_cast<std::size_t>(t2)] = signals.below(2) == 0 ? kSymbolX : kSymbolY;
  s.label = temporal_order_label(s.symbols);
  return s;
}

SyntheticSample generate(const DatasetSpec& spec, std::int64_t index) {
  return spec.task == SyntheticTask::adding ? gen_adding(spec, index) : gen_temporal_order(spec, index);
}

LabeledBatch make_batch(const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw DatasetError("cannot batch zero samples");
  LabeledBatch out;
  const auto task = samples.front().task;
  const std::size_t len = task == SyntheticTask::adding ? samples.front().values.size() : samples.front().symbols.size();
  out.inputs.size = static_cast<std::int64_t>(samples.size());
  out.inputs.length = static_cast<std::int64_t>(len);
  for (const auto& s : samples) {
    if (s.task != task) throw DatasetError("mixed tasks in one batch");
    if (task == SyntheticTask::adding) {
      if (s.values.size() != len) throw DatasetError("ragged batch");
      for (std::size_t i = 0; i < len; ++i) {
        out.inputs.pairs.push_back(s.values[i]);
        out.inputs.pairs.push_back(static_cast<double>(s.markers[i]));
      }
      out.targets.push_back(s.target);
    } else {
      if (s.symbols.size() != len) throw DatasetError("ragged batch");
      out.inputs.tokens.insert(out.inputs.tokens.end(), s.symbols.begin(), s.symbols.end());
      out.labels.push_back(s.label);
    }
  }
  return out;
}

void write_dataset(std::ostream& out, const DatasetSpec& spec) {
  spec.validate();
  nlohmann::ordered_json header;
  header["task"] = to_string(spec.task);
  header["N"] = spec.seq_len;
  header["count"] = spec.count;
  header["seed"] = spec.seed;
  out << header.dump() << '\n';
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto s = generate(spec, i);
    std::string line;
    if (spec.task == SyntheticTask::adding) {
      for (std::size_t k = 0; k < s.values.size(); ++k) {
        line += format_double(s.values[k]);
        line += ',';
        line += s.markers[k] ? '1' : '0';
        line += ',';
      }
      line += format_double(s.target);
    } else {
      for (auto sym : s.symbols) line += symbol_char(sym);
      line += ',';
      line += std::to_string(s.label);
    }
    out << line << '\n';
  }
}

}  // namespace paramixer
