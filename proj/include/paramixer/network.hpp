#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "paramixer/mixer.hpp"
#include "paramixer/numerics.hpp"
#include "paramixer/protocol.hpp"

namespace paramixer {

enum class TaskKind { regression, classification };
enum class Pooling { flat, cls };
enum class InputMode { token, real_pair };

struct ModelConfig {
  TaskKind task = TaskKind::regression;
  std::int64_t classes = 0;  // classification only
  std::int64_t seq_len = 128;
  std::int64_t blocks = 1;
  std::int64_t width = 32;
  std::int64_t hidden = 32;
  std::int64_t vocab = 0;  // token mode; includes padding (id 0) and CLS (id vocab-1) when used
  Pooling pooling = Pooling::flat;
  bool use_pos_embed = true;
  InputMode input_mode = InputMode::token;
  ProtocolSpec protocol;  // kind and optional K/M; N follows seq_len
  /// Factors read X0 (true) or the previous block's output (false).
  bool factors_from_input = true;

  void validate() const;
  std::int64_t outputs() const { return task == TaskKind::regression ? 1 : classes; }
  std::int64_t cls_token() const { return vocab - 1; }
  /// Sequence length before the CLS position is prepended.
  std::int64_t max_input_length() const { return pooling == Pooling::cls ? seq_len - 1 : seq_len; }
  ProtocolSpec resolved_protocol() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::ordered_json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// B sequences of equal length. Token mode fills `tokens` (B·length);
/// real_pair mode fills `pairs` (B·length·2, row-major (a, b)).
struct SequenceBatch {
  std::int64_t size = 0;
  std::int64_t length = 0;
  std::vector<std::int32_t> tokens;
  std::vector<double> pairs;
};

/// Trainable weights: the input map, optional positional table, L blocks
/// and the pooling head.
template <typename Scalar>
struct ModelParams {
  Array2<Scalar> input_map;   // vocab×d embedding or 2×d projection
  Array2<Scalar> positional;  // N×d, empty when disabled
  std::vector<MixerBlockParams<Scalar>> blocks;
  Array2<Scalar> head_weight;  // (N·d)×out for FLAT, d×out for CLS
  Array2<Scalar> head_bias;    // 1×out

  template <typename F>
  void for_each_param(F&& f) {
    f(std::string("input_map"), input_map);
    if (positional.size() > 0) f(std::string("positional"), positional);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].for_each_param("block" + std::to_string(l + 1), f);
    f(std::string("head.weight"), head_weight);
    f(std::string("head.bias"), head_bias);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    f(std::string("input_map"), input_map);
    if (positional.size() > 0) f(std::string("positional"), positional);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].for_each_param("block" + std::to_string(l + 1), f);
    f(std::string("head.weight"), head_weight);
    f(std::string("head.bias"), head_bias);
  }

  std::vector<Array2<Scalar>*> tensors() {
    std::vector<Array2<Scalar>*> out;
    for_each_param([&](const std::string&, Array2<Scalar>& t) { out.push_back(&t); });
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for_each_param([&](const std::string& n, const Array2<Scalar>&) { out.push_back(n); });
    return out;
  }
};

template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SplitMix64 rng(seed);
  auto layout = build_layout(config.resolved_protocol());
  ModelParams<Scalar> p;
  const Eigen::Index d = config.width;
  p.input_map = config.input_mode == InputMode::token ? glorot_uniform<Scalar>(config.vocab, d, rng)
                                                      : glorot_uniform<Scalar>(2, d, rng);
  if (config.use_pos_embed) p.positional = glorot_uniform<Scalar>(config.seq_len, d, rng);
  for (std::int64_t l = 0; l < config.blocks; ++l)
    p.blocks.push_back(init_mixer_block<Scalar>(layout, d, config.hidden, rng));
  const Eigen::Index head_in = config.pooling == Pooling::flat ? config.seq_len * d : d;
  p.head_weight = glorot_uniform<Scalar>(head_in, config.outputs(), rng);
  p.head_bias = Array2<Scalar>::Zero(1, config.outputs());
  return p;
}

/// Checks every tensor shape against the config.
template <typename Scalar>
void check_params(const ModelConfig& config, const ModelParams<Scalar>& p) {
  const Eigen::Index d = config.width;
  auto expect = [](const Array2<Scalar>& t, Eigen::Index r, Eigen::Index c, const char* what) {
    if (t.rows() != r || t.cols() != c)
      throw NumericsError(std::string(what) + " is " + shape_string(t.rows(), t.cols()) + ", expected " +
                          shape_string(r, c));
  };
  expect(p.input_map, config.input_mode == InputMode::token ? config.vocab : 2, d, "input map");
  if (config.use_pos_embed) expect(p.positional, config.seq_len, d, "positional table");
  if (static_cast<std::int64_t>(p.blocks.size()) != config.blocks) throw NumericsError("block count mismatch");
  for (const auto& b : p.blocks) {
    b.validate();
    if (b.layout->seq_len() != config.seq_len || b.width() != d) throw NumericsError("block shape mismatch");
  }
  expect(p.head_weight, config.pooling == Pooling::flat ? config.seq_len * d : d, config.outputs(), "head weight");
  expect(p.head_bias, 1, config.outputs(), "head bias");
}

/// X0 = input map (+ positional table) for a stacked batch, (B·N)×d.
/// Shorter sequences are right-padded with token 0 / pair (0, 0).
template <typename Scalar>
Var encode(Tape<Scalar>& tape, const SequenceBatch& batch, const ModelConfig& config,
           const ModelParams<Scalar>& params) {
  const std::int64_t n = config.seq_len;
  if (batch.size < 1) throw NumericsError("empty batch");
  if (batch.length > config.max_input_length())
    throw NumericsError("sequence of length " + std::to_string(batch.length) + " exceeds the model limit " +
                        std::to_string(config.max_input_length()));
  const std::int64_t offset = config.pooling == Pooling::cls ? 1 : 0;
  Var x;
  if (config.input_mode == InputMode::token) {
    if (static_cast<std::int64_t>(batch.tokens.size()) != batch.size * batch.length)
      throw NumericsError("token buffer size does not match batch shape");
    std::vector<std::int32_t> ids(static_cast<std::size_t>(batch.size * n), 0);
    for (std::int64_t b = 0; b < batch.size; ++b) {
      if (offset == 1) ids[static_cast<std::size_t>(b * n)] = static_cast<std::int32_t>(config.cls_token());
      for (std::int64_t i = 0; i < batch.length; ++i) {
        const auto sym = batch.tokens[static_cast<std::size_t>(b * batch.length + i)];
        if (sym < 0 || sym >= config.vocab || (offset == 1 && sym == config.cls_token()))
          throw NumericsError("symbol " + std::to_string(sym) + " outside the vocabulary");
        ids[static_cast<std::size_t>(b * n + offset + i)] = sym;
      }
    }
    x = gather_rows(tape, tape.parameter(params.input_map), std::move(ids));
  } else {
    if (static_cast<std::int64_t>(batch.pairs.size()) != batch.size * batch.length * 2)
      throw NumericsError("pair buffer size does not match batch shape");
    Array2<Scalar> pairs = Array2<Scalar>::Zero(batch.size * n, 2);
    for (std::int64_t b = 0; b < batch.size; ++b)
      for (std::int64_t i = 0; i < batch.length; ++i)
        for (int c = 0; c < 2; ++c)
          pairs(b * n + i, c) = Scalar(batch.pairs[static_cast<std::size_t>((b * batch.length + i) * 2 + c)]);
    x = matmul(tape, tape.constant(std::move(pairs)), tape.parameter(params.input_map));
  }
  if (config.use_pos_embed) x = add_tiled(tape, x, tape.parameter(params.positional));
  return x;
}

/// Final hidden state X^(L), (B·N)×d.
template <typename Scalar>
Var backbone(Tape<Scalar>& tape, Var x0, const ModelConfig& config, const ModelParams<Scalar>& params) {
  Var x = x0;
  for (const auto& block : params.blocks) x = apply_block(tape, x, config.factors_from_input ? x0 : x, block);
  return x;
}

/// B×out predictions (one scalar per sequence for regression, C logits otherwise).
template <typename Scalar>
Var forward(Tape<Scalar>& tape, const SequenceBatch& batch, const ModelConfig& config,
            const ModelParams<Scalar>& params) {
  const Var hidden = backbone(tape, encode(tape, batch, config, params), config, params);
  const std::int64_t n = config.seq_len;
  Var pooled;
  if (config.pooling == Pooling::flat) {
    pooled = reshape(tape, hidden, batch.size, n * config.width);
  } else {
    std::vector<std::int32_t> rows(static_cast<std::size_t>(batch.size));
    for (std::int64_t b = 0; b < batch.size; ++b) rows[static_cast<std::size_t>(b)] = static_cast<std::int32_t>(b * n);
    pooled = gather_rows(tape, hidden, std::move(rows));
  }
  return linear(tape, pooled, tape.parameter(params.head_weight), tape.parameter(params.head_bias));
}

template <typename Scalar>
Array2<Scalar> predict(const SequenceBatch& batch, const ModelConfig& config, const ModelParams<Scalar>& params) {
  Tape<Scalar> tape(false);
  return tape.value(forward(tape, batch, config, params));
}

/// Task loss: MSE against `targets` (regression) or cross-entropy on `labels`.
template <typename Scalar>
Var task_loss(Tape<Scalar>& tape, Var prediction, const ModelConfig& config, std::span<const double> targets,
              std::span<const std::int32_t> labels) {
  if (config.task == TaskKind::regression) {
    Array2<Scalar> t(static_cast<Eigen::Index>(targets.size()), 1);
    for (std::size_t i = 0; i < targets.size(); ++i) t(static_cast<Eigen::Index>(i), 0) = Scalar(targets[i]);
    return mse(tape, prediction, t);
  }
  return cross_entropy(tape, prediction, labels);
}

/// Dense softmax attention, kept as a baseline: softmax(XWq (XWk)^T / sqrt(D)) XWv.
template <typename Scalar>
struct ReferenceAttentionParams {
  Array2<Scalar> query, key, value;
};

template <typename Scalar>
Array2<Scalar> reference_attention(const Array2<Scalar>& x, const ReferenceAttentionParams<Scalar>& p,
                                   Array2<Scalar>* attention = nullptr) {
  using std::sqrt;
  if (p.query.rows() != x.cols() || p.key.rows() != x.cols() || p.value.rows() != x.cols() ||
      p.query.cols() != p.key.cols() || p.query.cols() < 1)
    throw NumericsError("reference attention projection shapes do not match input width " +
                        std::to_string(x.cols()));
  const Array2<Scalar> q = x * p.query;
  const Array2<Scalar> k = x * p.key;
  const Array2<Scalar> v = x * p.value;
  Array2<Scalar> scores = (q * k.transpose()) / sqrt(Scalar(p.query.cols()));
  Array2<Scalar> a = softmax_rows(scores);
  Array2<Scalar> out = a * v;
  if (attention != nullptr) *attention = std::move(a);
  return out;
}

struct FlopEstimate {
  std::int64_t stored_entries_per_block = 0;
  std::int64_t mixing_multiplies = 0;  // sparse factor chain, all blocks
  std::int64_t mlp_multiplies = 0;     // factor generators and value maps, all blocks
  std::int64_t head_multiplies = 0;
  std::int64_t total() const { return mixing_multiplies + mlp_multiplies + head_multiplies; }
};

/// Multiply counts for one sequence through the forward pass.
FlopEstimate count_flops_estimate(const ModelConfig& config);

}  // namespace paramixer
