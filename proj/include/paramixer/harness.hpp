#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "paramixer/datagen.hpp"
#include "paramixer/network.hpp"

namespace paramixer {

/// Everything a training run needs. Defaults follow the synthetic-task
/// setup (lr 0.001, batch 40) scaled to desk size.
struct RunConfig {
  SyntheticTask task = SyntheticTask::adding;
  std::int64_t seq_len = 128;
  std::int64_t train_count = 20000;
  std::int64_t test_count = 2000;
  std::uint64_t seed = 1;

  ProtocolKind protocol = ProtocolKind::chord;
  std::int64_t links = 0;    // 0: protocol default
  std::int64_t factors = 0;  // 0: ceil(log2 N)
  std::int64_t blocks = 1;
  std::int64_t width = 32;
  std::int64_t hidden = 32;
  Pooling pooling = Pooling::flat;
  bool use_pos_embed = true;
  bool factors_from_input = true;

  double learning_rate = 1e-3;
  std::int64_t batch_size = 40;
  std::int64_t epochs = 30;
  std::int64_t eval_interval = 0;  // optimizer steps between test evaluations; 0 = once per epoch
  bool early_stop = true;          // stop once test accuracy reaches 1
  std::filesystem::path out_dir = "run";

  void validate() const;
  ModelConfig model_config() const;
  DatasetSpec dataset() const;  // train indices [0, train_count), test after
};

nlohmann::ordered_json to_json(const RunConfig& config);

struct MetricsRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Metrics line without wall-clock time, so identical runs give identical bytes.
std::string metrics_line(const MetricsRecord& record);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::int64_t count = 0;
};

/// Mean loss and accuracy over samples [first, first + count) of `data`.
/// Adding counts |y - y_hat| < 0.04 as correct; Temporal Order uses argmax.
EvalResult evaluate(const ModelConfig& config, const ModelParams<double>& params, const DatasetSpec& data,
                    std::int64_t first, std::int64_t count, std::int64_t chunk = 250);

struct TrainResult {
  std::vector<MetricsRecord> records;
  double final_test_accuracy = 0.0;
  double best_test_accuracy = 0.0;
  std::int64_t steps = 0;
  double cpu_seconds = 0.0;
};

/// Adam over generated batches. Writes metrics.jsonl, timing.jsonl,
/// final.ckpt and best.ckpt into config.out_dir. `log` receives progress.
TrainResult train(const RunConfig& config, std::ostream& log);

/// Structural report for one protocol spec, plus multiply counts for a
/// model of the given width/hidden/blocks.
nlohmann::ordered_json analyze(const ProtocolSpec& spec, std::int64_t width, std::int64_t hidden,
                               std::int64_t blocks);

/// Command-line entry point; verbs train, eval, analyze, gendata.
/// Returns 0 on success, 1 on usage/config errors, 2 on runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace paramixer
