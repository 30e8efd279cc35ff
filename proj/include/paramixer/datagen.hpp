#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "paramixer/network.hpp"

namespace paramixer {

class DatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class SyntheticTask { adding, temporal_order };

std::string_view to_string(SyntheticTask task);
SyntheticTask parse_synthetic_task(std::string_view name);

struct DatasetSpec {
  SyntheticTask task = SyntheticTask::adding;
  std::int64_t seq_len = 128;
  std::int64_t count = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Temporal Order alphabet: noise symbols a-d are 0-3, signals X=4, Y=5.
inline constexpr std::int32_t kSymbolX = 4;
inline constexpr std::int32_t kSymbolY = 5;
inline constexpr std::int64_t kTemporalOrderVocab = 6;
inline constexpr std::int64_t kTemporalOrderClasses = 4;
char symbol_char(std::int32_t symbol);
std::int32_t symbol_from_char(char c);

/// Adding: values/markers hold (a_i, b_i) and target y.
/// Temporal Order: symbols and label.
struct SyntheticSample {
  SyntheticTask task = SyntheticTask::adding;
  std::vector<double> values;
  std::vector<std::uint8_t> markers;
  double target = 0.0;
  std::vector<std::int32_t> symbols;
  std::int32_t label = 0;
};

double adding_target(double first, double second);
/// |y - prediction| < 0.04, strictly.
bool adding_correct(double target, double prediction);
/// (X,X)->0, (X,Y)->1, (Y,X)->2, (Y,Y)->3 for the signals in position order.
std::int32_t temporal_order_label(std::int32_t first, std::int32_t second);
/// Label of an arbitrary symbol sequence with exactly two signals.
std::int32_t temporal_order_label(const std::vector<std::int32_t>& symbols);

SyntheticSample gen_adding(const DatasetSpec& spec, std::int64_t index);
SyntheticSample gen_temporal_order(const DatasetSpec& spec, std::int64_t index);
SyntheticSample generate(const DatasetSpec& spec, std::int64_t index);

/// Samples [first, first + count) of `spec`, packed for the network.
struct LabeledBatch {
  SequenceBatch inputs;
  std::vector<double> targets;
  std::vector<std::int32_t> labels;
};
LabeledBatch make_batch(const std::vector<SyntheticSample>& samples);

/// Export: one JSON header line with the spec, then one sample per line.
/// Adding lines are `a_1,b_1,...,a_N,b_N,y`; Temporal Order lines are the
/// symbol string followed by `,label`.
void write_dataset(std::ostream& out, const DatasetSpec& spec);

}  // namespace paramixer
