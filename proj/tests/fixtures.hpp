#pragma once

#include <algorithm>
#include <limits>

#include <Eigen/SVD>

#include "gradcheck.hpp"
#include "paramixer/mixer.hpp"
#include "paramixer/network.hpp"

namespace paramixer::testing {

inline Array2d random_matrix(Eigen::Index r, Eigen::Index c, SplitMix64& rng, double lo = -1, double hi = 1) {
  Array2d m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Eigen::Index svd_rank(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double tol = static_cast<double>(std::max(a.rows(), a.cols())) * s(0) * std::numeric_limits<double>::epsilon();
  return (s.array() > tol).count();
}

/// gelu(x + c) == x + c to the last bit once c is large, so this is the
/// identity map up to one rounding of the shift.
inline Mlp3Params<double> identity_mlp(Eigen::Index d, double shift = 64.0) {
  Mlp3Params<double> p;
  p.w1 = Array2d::Identity(d, d);
  p.b1 = Array2d::Constant(1, d, shift);
  p.w2 = Array2d::Identity(d, d);
  p.b2 = Array2d::Constant(1, d, -shift);
  return p;
}

/// Factor MLP that ignores its input and emits `row` everywhere.
inline Mlp3Params<double> constant_mlp(Eigen::Index d, const Array2d& row) {
  Mlp3Params<double> p;
  p.w1 = Array2d::Zero(d, 1);
  p.b1 = Array2d::Zero(1, 1);
  p.w2 = Array2d::Zero(1, row.cols());
  p.b2 = row;
  return p;
}

/// Three-token instance: W2 = [2, -1, 0] per row (offsets 0, 1, 2), W1 the
/// identity, g the identity. Row 0 of the output is 2·v0 - v1.
inline MixerBlockParams<double> hull_breaking_block() {
  auto layout = build_layout(ProtocolSpec{ProtocolKind::chord, 3, 3, 2});
  MixerBlockParams<double> p;
  Array2d id(1, 3);
  id << 1, 0, 0;
  Array2d extrapolate(1, 3);
  extrapolate << 2, -1, 0;
  p.factor_mlps = {constant_mlp(2, id), constant_mlp(2, extrapolate)};
  p.value_mlp = identity_mlp(2);
  p.layout = std::move(layout);
  return p;
}

inline Array2d hull_instance_input() {
  Array2d x(3, 2);
  x << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  return x;
}

/// Support function h(c) = max_i c·v_i; a point p with c·p > h(c) is
/// certified outside the hull of the rows of V.
inline double support(const Array2d& v, const Eigen::RowVectorXd& c) {
  return (v * c.transpose()).maxCoeff();
}

/// Small full model: N=16, d=4, L=2. Biases are perturbed away from zero.
inline ModelConfig small_model(ProtocolKind kind, Pooling pooling, InputMode mode = InputMode::token) {
  ModelConfig c;
  c.seq_len = 16;
  c.blocks = 2;
  c.width = 4;
  c.hidden = 5;
  c.pooling = pooling;
  c.input_mode = mode;
  c.protocol.kind = kind;
  if (mode == InputMode::token) {
    c.task = TaskKind::classification;
    c.classes = 3;
    c.vocab = 6;
  }
  return c;
}

inline SequenceBatch small_batch(const ModelConfig& c, std::int64_t size, SplitMix64& rng) {
  SequenceBatch b;
  b.size = size;
  b.length = c.max_input_length();
  if (c.input_mode == InputMode::token) {
    const auto symbols = static_cast<std::uint64_t>(c.pooling == Pooling::cls ? c.vocab - 1 : c.vocab);
    for (std::int64_t i = 0; i < size * b.length; ++i) b.tokens.push_back(static_cast<std::int32_t>(rng.below(symbols)));
  } else {
    for (std::int64_t i = 0; i < size * b.length * 2; ++i) b.pairs.push_back(rng.uniform());
  }
  return b;
}

/// Finite differences over every parameter tensor of a full model.
inline std::vector<std::pair<std::string, GradCheckReport>> model_gradient_check(const ModelConfig& c,
                                                                                  std::uint64_t seed) {
  SplitMix64 rng(seed);
  auto params = init_model<double>(c, seed);
  params.for_each_param([&](const std::string&, Array2d& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += rng.uniform(-0.1, 0.1);
  });
  const auto batch = small_batch(c, 2, rng);
  std::vector<double> targets{rng.uniform(), rng.uniform()};
  std::vector<std::int32_t> labels{static_cast<std::int32_t>(rng.below(3)), static_cast<std::int32_t>(rng.below(3))};
  auto loss = [&](Tape<double>& t) { return task_loss(t, forward(t, batch, c, params), c, targets, labels); };
  std::vector<std::pair<std::string, GradCheckReport>> out;
  params.for_each_param([&](const std::string& name, Array2d& t) {
    out.emplace_back(name, gradient_check({{name, &t}}, loss));
  });
  return out;
}

}  // namespace paramixer::testing
