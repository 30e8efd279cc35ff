#include "paramixer/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "paramixer/checkpoint.hpp"
#include "paramixer/random.hpp"

namespace paramixer {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Seed streams derived from the run seed.
enum SeedStream : std::uint64_t { kInitStream = 101, kShuffleStream = 102 };

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

}  // namespace

void RunConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (eval_interval < 0) throw UsageError("eval interval must be >= 0");
  if (train_count < 1 || test_count < 1) throw UsageError("train and test counts must be >= 1");
  if (task == SyntheticTask::adding && pooling == Pooling::cls)
    throw UsageError("CLS pooling is not available for the Adding task (real-valued input)");
  dataset().validate();
  model_config().validate();
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.seq_len = pooling == Pooling::cls ? seq_len + 1 : seq_len;
  m.blocks = blocks;
  m.width = width;
  m.hidden = hidden;
  m.pooling = pooling;
  m.use_pos_embed = use_pos_embed;
  m.factors_from_input = factors_from_input;
  m.protocol = ProtocolSpec{protocol, m.seq_len, links, factors};
  if (task == SyntheticTask::adding) {
    m.task = TaskKind::regression;
    m.input_mode = InputMode::real_pair;
  } else {
    m.task = TaskKind::classification;
    m.classes = kTemporalOrderClasses;
    m.input_mode = InputMode::token;
    m.vocab = kTemporalOrderVocab + (pooling == Pooling::cls ? 1 : 0);
  }
  return m;
}

DatasetSpec RunConfig::dataset() const { return DatasetSpec{task, seq_len, train_count + test_count, seed}; }

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["task"] = to_string(c.task);
  j["seq_len"] = c.seq_len;
  j["train_count"] = c.train_count;
  j["test_count"] = c.test_count;
  j["seed"] = c.seed;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["eval_interval"] = c.eval_interval;
  j["early_stop"] = c.early_stop;
  return j;
}

std::string metrics_line(const MetricsRecord& r) {
  return "{\"step\":" + std::to_string(r.step) + ",\"epoch\":" + std::to_string(r.epoch) + ",\"split\":\"" + r.split +
         "\",\"loss\":" + format_double(r.loss) + ",\"accuracy\":" + format_double(r.accuracy) + "}";
}

namespace {

// Every step allocates and frees the same few-MB activations. Keeping them
// on the heap instead of fresh mmap regions avoids page faults on each touch.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

EvalResult evaluate(const ModelConfig& config, const ModelParams<double>& params, const DatasetSpec& data,
                    std::int64_t first, std::int64_t count, std::int64_t chunk) {
  if (first < 0 || count < 1 || first + count > data.count) throw DatasetError("evaluation range outside the dataset");
  keep_freed_memory();
  if ((data.task == SyntheticTask::adding) != (config.task == TaskKind::regression))
    throw NumericsError("model task does not match the dataset task");
  EvalResult result;
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (std::int64_t start = first; start < first + count; start += chunk) {
    const std::int64_t stop = std::min(first + count, start + chunk);
    std::vector<SyntheticSample> samples;
    for (std::int64_t i = start; i < stop; ++i) samples.push_back(generate(data, i));
    const auto batch = make_batch(samples);
    const Array2d out = predict(batch.inputs, config, params);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      if (config.task == TaskKind::regression) {
        const double y = batch.targets[static_cast<std::size_t>(r)];
        const double diff = out(r, 0) - y;
        loss_sum += diff * diff;
        correct += adding_correct(y, out(r, 0)) ? 1 : 0;
      } else {
        const auto label = batch.labels[static_cast<std::size_t>(r)];
        const double shift = out.row(r).maxCoeff();
        const double lse = shift + std::log((out.row(r).array() - shift).exp().sum());
        loss_sum += lse - out(r, label);
        Eigen::Index arg = 0;
        out.row(r).maxCoeff(&arg);
        correct += arg == label ? 1 : 0;
      }
    }
  }
  result.count = count;
  result.loss = loss_sum / static_cast<double>(count);
  result.accuracy = static_cast<double>(correct) / static_cast<double>(count);
  return result;
}

TrainResult train(const RunConfig& config, std::ostream& log) {
  config.validate();
  keep_freed_memory();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  std::ofstream metrics(config.out_dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream timing(config.out_dir / "timing.jsonl", std::ios::trunc);
  if (ec || !metrics || !timing) throw std::runtime_error("cannot write to output directory '" + config.out_dir.string() + "'");

  const ModelConfig model = config.model_config();
  const DatasetSpec data = config.dataset();
  ModelParams<double> params = init_model<double>(model, counter_hash(config.seed, kInitStream, 0));
  std::vector<Array2d*> tensors = params.tensors();
  AdamState<double> adam;
  adam.options.learning_rate = config.learning_rate;

  std::vector<SyntheticSample> train_set;
  train_set.reserve(static_cast<std::size_t>(config.train_count));
  for (std::int64_t i = 0; i < config.train_count; ++i) train_set.push_back(generate(data, i));

  const auto wall_start = std::chrono::steady_clock::now();
  const double cpu_start = cpu_seconds();
  TrainResult result;
  nlohmann::ordered_json run_meta;
  run_meta["run"] = to_json(config);

  auto emit = [&](MetricsRecord record) {
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    metrics << metrics_line(record) << '\n' << std::flush;
    timing << "{\"step\":" << record.step << ",\"split\":\"" << record.split
           << "\",\"wall_seconds\":" << format_double(record.wall_seconds) << "}\n"
           << std::flush;
    result.records.push_back(record);
    log << "step " << record.step << " epoch " << record.epoch << " " << record.split << " loss "
        << record.loss << " accuracy " << record.accuracy << " (" << record.wall_seconds << " s)\n";
  };

  bool have_best = false;
  auto evaluate_test = [&](std::int64_t step, std::int64_t epoch) {
    const auto r = evaluate(model, params, data, config.train_count, config.test_count);
    emit(MetricsRecord{step, epoch, "test", r.loss, r.accuracy, 0.0});
    result.final_test_accuracy = r.accuracy;
    if (!have_best || r.accuracy > result.best_test_accuracy) {
      have_best = true;
      result.best_test_accuracy = r.accuracy;
      auto meta = run_meta;
      meta["step"] = step;
      meta["test_accuracy"] = r.accuracy;
      save_checkpoint(config.out_dir / "best.ckpt", model_checkpoint(model, params, meta));
    }
    return r.accuracy;
  };

  std::int64_t step = 0;
  bool stop = evaluate_test(0, 0) >= 1.0 && config.early_stop;
  std::int64_t last_eval_step = 0;
  std::int64_t epochs_done = 0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(config.train_count));
  for (std::int64_t epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle(counter_hash(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_loss = 0.0;
    std::int64_t epoch_batches = 0;
    for (std::int64_t start = 0; start < config.train_count && !stop; start += config.batch_size) {
      const std::int64_t stop_at = std::min(config.train_count, start + config.batch_size);
      std::vector<SyntheticSample> samples;
      samples.reserve(static_cast<std::size_t>(stop_at - start));
      for (std::int64_t i = start; i < stop_at; ++i)
        samples.push_back(train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      const auto batch = make_batch(samples);

      Tape<double> tape;
      const Var prediction = forward(tape, batch.inputs, model, params);
      const Var loss = task_loss(tape, prediction, model, batch.targets, batch.labels);
      tape.backward(loss);
      std::vector<Array2d> grads;
      grads.reserve(tensors.size());
      for (const Array2d* t : tensors) grads.push_back(tape.gradient(*t));
      adam_step<double>(tensors, grads, adam);
      epoch_loss += tape.value(loss)(0, 0);
      ++epoch_batches;
      ++step;

      if (config.eval_interval > 0 && step % config.eval_interval == 0) {
        last_eval_step = step;
        stop = evaluate_test(step, epoch) >= 1.0 && config.early_stop;
      }
    }
    log << "epoch " << epoch << " mean train loss " << epoch_loss / static_cast<double>(epoch_batches) << '\n';
    if (config.eval_interval == 0 && last_eval_step != step) {
      last_eval_step = step;
      stop = evaluate_test(step, epoch) >= 1.0 && config.early_stop;
    }
    epochs_done = epoch;
  }
  if (last_eval_step != step) evaluate_test(step, epochs_done);
  result.steps = step;

  if (step > 0) {
    const auto r = evaluate(model, params, data, 0, config.train_count);
    emit(MetricsRecord{step, epochs_done, "train", r.loss, r.accuracy, 0.0});
  }
  auto meta = run_meta;
  meta["step"] = step;
  meta["test_accuracy"] = result.final_test_accuracy;
  save_checkpoint(config.out_dir / "final.ckpt", model_checkpoint(model, params, meta));
  result.cpu_seconds = cpu_seconds() - cpu_start;
  return result;
}

nlohmann::ordered_json analyze(const ProtocolSpec& requested, std::int64_t width, std::int64_t hidden,
                               std::int64_t blocks) {
  const ProtocolSpec spec = requested.resolved();
  const SparseLayout layout(spec);
  nlohmann::ordered_json j;
  j["protocol"] = to_string(spec.kind);
  j["N"] = spec.seq_len;
  j["K"] = spec.links;
  j["M"] = spec.factors;
  j["entries"] = stored_entries(spec);
  j["allocated_entries"] = layout.allocated_entries();
  j["complete"] = reachability_complete(layout);
  std::int64_t min_rank = spec.seq_len;
  auto ranks = nlohmann::ordered_json::array();
  for (std::int64_t m = 1; m <= spec.factors; ++m) {
    const auto offsets = offset_pattern(spec, m);
    const auto rank = circulant_rank(offsets, spec.seq_len);
    ranks.push_back(rank);
    min_rank = std::min(min_rank, rank);
  }
  j["rank"] = min_rank;
  j["factor_ranks"] = ranks;
  j["warnings"] = spec.warnings();
  ModelConfig model;
  model.seq_len = spec.seq_len;
  model.width = width;
  model.hidden = hidden;
  model.blocks = blocks;
  model.input_mode = InputMode::real_pair;
  model.protocol = spec;
  const auto flops = count_flops_estimate(model);
  nlohmann::ordered_json f;
  f["width"] = width;
  f["hidden"] = hidden;
  f["blocks"] = blocks;
  f["mixing_multiplies"] = flops.mixing_multiplies;
  f["mlp_multiplies"] = flops.mlp_multiplies;
  f["head_multiplies"] = flops.head_multiplies;
  f["dense_attention_multiplies"] = blocks * spec.seq_len * spec.seq_len * width;
  j["multiplies"] = f;
  return j;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    for (auto& c : key)
      if (c == '_') c = '-';
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out[key] = value;
  }
  return out;
}

bool flag_given(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

/// Splices `key = value` lines from --config in front of the command-line
/// flags, skipping keys the command line sets itself.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path || args.empty()) return args;
  // Spliced values belong to the verb, so they go right after it.
  std::size_t verb = 1;
  while (verb < args.size() && args[verb].rfind("-", 0) == 0) ++verb;
  const std::size_t split = std::min(verb + 1, args.size());
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(split));
  for (const auto& [key, value] : read_config_file(*path)) {
    if (key == "config") continue;
    if (!flag_given(args, key)) out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(split), args.end());
  return out;
}

struct ProtocolFlags {
  std::string kind = "CHORD";
  std::int64_t links = 0;
  std::int64_t factors = 0;
};

void add_model_flags(CLI::App* cmd, RunConfig& rc, ProtocolFlags& proto, std::string& pooling) {
  cmd->add_option("--protocol", proto.kind, "CHORD or CDIL")->capture_default_str();
  cmd->add_option("--links", proto.links, "stored entries per row (0: protocol default)")->capture_default_str();
  cmd->add_option("--factors", proto.factors, "sparse factors per block (0: ceil(log2 N))")->capture_default_str();
  cmd->add_option("--blocks", rc.blocks, "mixing blocks L")->capture_default_str();
  cmd->add_option("--width", rc.width, "embedding width d")->capture_default_str();
  cmd->add_option("--hidden", rc.hidden, "MLP hidden width")->capture_default_str();
  cmd->add_option("--pooling", pooling, "FLAT or CLS")->capture_default_str();
  cmd->add_option("--pos-embed", rc.use_pos_embed, "learned positional table")->capture_default_str();
  cmd->add_option("--factors-from-input", rc.factors_from_input,
                  "factors read X0 (true) or the previous block output (false)")
      ->capture_default_str();
}

void add_data_flags(CLI::App* cmd, RunConfig& rc, std::string& task) {
  cmd->add_option("--task", task, "adding or temporal_order")->capture_default_str();
  cmd->add_option("--seq-len", rc.seq_len, "sequence length N")->capture_default_str();
  cmd->add_option("--train-count", rc.train_count, "training samples")->capture_default_str();
  cmd->add_option("--test-count", rc.test_count, "test samples")->capture_default_str();
  cmd->add_option("--seed", rc.seed, "run seed")->capture_default_str();
}

void apply_flags(RunConfig& rc, const ProtocolFlags& proto, const std::string& pooling, const std::string& task) {
  try {
    rc.protocol = parse_protocol_kind(proto.kind);
    rc.task = parse_synthetic_task(task);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  rc.links = proto.links;
  rc.factors = proto.factors;
  if (pooling == "FLAT" || pooling == "flat") {
    rc.pooling = Pooling::flat;
  } else if (pooling == "CLS" || pooling == "cls") {
    rc.pooling = Pooling::cls;
  } else {
    throw UsageError("unknown pooling '" + pooling + "' (expected FLAT or CLS)");
  }
}

void validate_or_usage(const RunConfig& rc) {
  try {
    rc.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse-factorized sequence mixing: training, evaluation and protocol analysis"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunConfig rc;
  ProtocolFlags proto;
  std::string pooling = "FLAT";
  std::string task = "adding";
  std::string config_path;
  std::string out_dir = "run";
  bool no_early_stop = false;

  auto* train_cmd = app.add_subcommand("train", "train a model on a synthetic task");
  train_cmd->add_option("--config", config_path, "key = value config file");
  add_data_flags(train_cmd, rc, task);
  add_model_flags(train_cmd, rc, proto, pooling);
  train_cmd->add_option("--lr", rc.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", rc.batch_size, "batch size")->capture_default_str();
  train_cmd->add_option("--epochs", rc.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--eval-interval", rc.eval_interval, "steps between test evaluations (0: per epoch)")
      ->capture_default_str();
  train_cmd->add_option("--early-stop", rc.early_stop, "stop at 100% test accuracy")->capture_default_str();
  train_cmd->add_flag("--no-early-stop", no_early_stop, "disable early stopping");
  train_cmd->add_option("--out", out_dir, "output directory")->capture_default_str();

  std::string checkpoint_path;
  std::string split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on generated data (JSON to stdout)");
  eval_cmd->add_option("--config", config_path, "key = value config file");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  add_data_flags(eval_cmd, rc, task);
  eval_cmd->add_option("--split", split, "train, test or all")->capture_default_str();
  eval_cmd->add_option("--out", out_dir, "unused; accepted for symmetry");

  ProtocolSpec analyze_spec{ProtocolKind::chord, 16, 0, 0};
  std::string dense_csv;
  std::string layout_csv;
  auto* analyze_cmd = app.add_subcommand("analyze", "structural report for a protocol (JSON to stdout)");
  analyze_cmd->add_option("--config", config_path, "key = value config file");
  analyze_cmd->add_option("--protocol", proto.kind, "CHORD or CDIL")->capture_default_str();
  analyze_cmd->add_option("--seq-len", analyze_spec.seq_len, "sequence length N")->capture_default_str();
  analyze_cmd->add_option("--links", proto.links, "stored entries per row (0: default)")->capture_default_str();
  analyze_cmd->add_option("--factors", proto.factors, "factors M (0: default)")->capture_default_str();
  analyze_cmd->add_option("--width", rc.width, "model width for multiply counts")->capture_default_str();
  analyze_cmd->add_option("--hidden", rc.hidden, "MLP hidden width for multiply counts")->capture_default_str();
  analyze_cmd->add_option("--blocks", rc.blocks, "blocks for multiply counts")->capture_default_str();
  analyze_cmd->add_option("--seed", rc.seed, "seed for the dense-matrix dump")->capture_default_str();
  analyze_cmd->add_option("--dense-csv", dense_csv, "write A for a random block (N <= 256)");
  analyze_cmd->add_option("--layout-csv", layout_csv, "write the layout table");
  analyze_cmd->add_option("--out", out_dir, "directory for relative CSV paths");

  std::string output_path;
  auto* gendata_cmd = app.add_subcommand("gendata", "export a synthetic dataset");
  gendata_cmd->add_option("--config", config_path, "key = value config file");
  gendata_cmd->add_option("--task", task, "adding or temporal_order")->capture_default_str();
  gendata_cmd->add_option("--seq-len", rc.seq_len, "sequence length N")->capture_default_str();
  gendata_cmd->add_option("--count", rc.train_count, "number of samples")->capture_default_str();
  gendata_cmd->add_option("--seed", rc.seed, "dataset seed")->capture_default_str();
  gendata_cmd->add_option("--output", output_path, "output file")->required();
  gendata_cmd->add_option("--out", out_dir, "directory for a relative output path");

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*train_cmd) {
      apply_flags(rc, proto, pooling, task);
      if (no_early_stop) rc.early_stop = false;
      rc.out_dir = out_dir;
      validate_or_usage(rc);
      const auto result = train(rc, err);
      nlohmann::ordered_json summary;
      summary["steps"] = result.steps;
      summary["final_test_accuracy"] = result.final_test_accuracy;
      summary["best_test_accuracy"] = result.best_test_accuracy;
      summary["out"] = rc.out_dir.string();
      out << summary.dump() << '\n';
      return 0;
    }
    if (*eval_cmd) {
      Checkpoint ck;
      try {
        ck = load_checkpoint(checkpoint_path);
      } catch (const CheckpointError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
      }
      const auto restored = restore_model(ck);
      // Unset data flags fall back to the run recorded in the checkpoint.
      if (ck.metadata.contains("run")) {
        const auto& run = ck.metadata["run"];
        if (eval_cmd->count("--task") == 0) task = run.at("task").get<std::string>();
        if (eval_cmd->count("--seq-len") == 0) rc.seq_len = run.at("seq_len").get<std::int64_t>();
        if (eval_cmd->count("--train-count") == 0) rc.train_count = run.at("train_count").get<std::int64_t>();
        if (eval_cmd->count("--test-count") == 0) rc.test_count = run.at("test_count").get<std::int64_t>();
        if (eval_cmd->count("--seed") == 0) rc.seed = run.at("seed").get<std::uint64_t>();
      }
      try {
        rc.task = parse_synthetic_task(task);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const DatasetSpec data = rc.dataset();
      const std::int64_t expected_len = restored.config.max_input_length();
      if (rc.seq_len != expected_len || (rc.task == SyntheticTask::adding) != (restored.config.task == TaskKind::regression)) {
        err << "error: checkpoint model (" << to_json(restored.config).dump()
            << ") does not match the requested dataset (task " << to_string(rc.task) << ", N " << rc.seq_len << ")\n";
        return 1;
      }
      std::int64_t first = 0;
      std::int64_t count = data.count;
      if (split == "train") {
        count = rc.train_count;
      } else if (split == "test") {
        first = rc.train_count;
        count = rc.test_count;
      } else if (split != "all") {
        throw UsageError("unknown split '" + split + "'");
      }
      const auto r = evaluate(restored.config, restored.params, data, first, count);
      nlohmann::ordered_json j;
      j["split"] = split;
      j["count"] = r.count;
      j["loss"] = r.loss;
      j["accuracy"] = r.accuracy;
      out << j.dump() << '\n';
      return 0;
    }
    if (*analyze_cmd) {
      try {
        analyze_spec.kind = parse_protocol_kind(proto.kind);
        analyze_spec.links = proto.links;
        analyze_spec.factors = proto.factors;
        analyze_spec = analyze_spec.resolved();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      auto report = analyze(analyze_spec, rc.width, rc.hidden, rc.blocks);
      auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && analyze_cmd->count("--out") > 0 ? std::filesystem::path(out_dir) / path : path;
      };
      if (!layout_csv.empty()) {
        std::ofstream f(resolve(layout_csv));
        if (!f) throw std::runtime_error("cannot write '" + layout_csv + "'");
        write_layout_csv(f, SparseLayout(analyze_spec));
        report["layout_csv"] = resolve(layout_csv).string();
      }
      if (!dense_csv.empty()) {
        if (analyze_spec.seq_len > 256) throw UsageError("dense dumps are limited to N <= 256");
        SplitMix64 rng(rc.seed);
        auto layout = build_layout(analyze_spec);
        const auto block = init_mixer_block<double>(layout, rc.width, rc.hidden, rng);
        Array2d x0(analyze_spec.seq_len, rc.width);
        for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = rng.uniform(-1.0, 1.0);
        const Array2d a = dense_attention_matrix(generate_factors(x0, block), *layout);
        std::ofstream f(resolve(dense_csv));
        if (!f) throw std::runtime_error("cannot write '" + dense_csv + "'");
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          for (Eigen::Index j = 0; j < a.cols(); ++j) f << (j ? "," : "") << format_double(a(i, j));
          f << '\n';
        }
        report["dense_csv"] = resolve(dense_csv).string();
      }
      out << report.dump() << '\n';
      return 0;
    }
    if (*gendata_cmd) {
      try {
        rc.task = parse_synthetic_task(task);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      DatasetSpec spec{rc.task, rc.seq_len, rc.train_count, rc.seed};
      try {
        spec.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      std::filesystem::path path(output_path);
      if (path.is_relative() && gendata_cmd->count("--out") > 0) path = std::filesystem::path(out_dir) / path;
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) {
        err << "error: cannot write '" << path.string() << "'\n";
        return 2;
      }
      write_dataset(f, spec);
      if (!f) {
        err << "error: failed writing '" << path.string() << "'\n";
        return 2;
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace paramixer
