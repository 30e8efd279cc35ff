#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "paramixer/network.hpp"

using namespace paramixer;
using testing::random_matrix;

namespace {

Array2d encoded(const SequenceBatch& batch, const ModelConfig& c, const ModelParams<double>& p) {
  Tape<double> t;
  return t.value(encode(t, batch, c, p));
}

Array2d hidden_state(const SequenceBatch& batch, const ModelConfig& c, const ModelParams<double>& p) {
  Tape<double> t;
  return t.value(backbone(t, encode(t, batch, c, p), c, p));
}

SequenceBatch tokens(std::vector<std::int32_t> ids) {
  SequenceBatch b;
  b.size = 1;
  b.length = static_cast<std::int64_t>(ids.size());
  b.tokens = std::move(ids);
  return b;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = testing::small_model(ProtocolKind::chord, Pooling::flat);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.classes = 1;
  CHECK_THROWS_AS(bad.validate(), NumericsError);
  bad = testing::small_model(ProtocolKind::chord, Pooling::cls, InputMode::real_pair);
  CHECK_THROWS_AS(bad.validate(), NumericsError);
  bad = c;
  bad.protocol = ProtocolSpec{ProtocolKind::cdil, 0, 4, 0};
  CHECK_THROWS_AS(bad.validate(), ProtocolError);
  CHECK(model_config_from_json(to_json(c)).resolved_protocol() == c.resolved_protocol());
}

TEST_CASE("encode") {
  auto c = testing::small_model(ProtocolKind::chord, Pooling::flat);
  auto p = init_model<double>(c, 1);
  SplitMix64 rng(1);
  const auto batch = testing::small_batch(c, 1, rng);
  SUBCASE("zero embeddings, no positional table") {
    c.use_pos_embed = false;
    p.positional.resize(0, 0);
    p.input_map.setZero();
    CHECK(encoded(batch, c, p) == Array2d::Zero(16, 4));
  }
  SUBCASE("zero embeddings give the positional rows") {
    p.input_map.setZero();
    CHECK(encoded(batch, c, p) == p.positional);
  }
  SUBCASE("token lookup, padded with id 0") {
    c.use_pos_embed = false;
    p.positional.resize(0, 0);
    const Array2d x = encoded(tokens({3, 1}), c, p);
    CHECK(x.row(0) == p.input_map.row(3));
    CHECK(x.row(1) == p.input_map.row(1));
    for (Eigen::Index i = 2; i < 16; ++i) CHECK(x.row(i) == p.input_map.row(0));
  }
  SUBCASE("real pairs project linearly") {
    auto rc = testing::small_model(ProtocolKind::chord, Pooling::flat, InputMode::real_pair);
    rc.use_pos_embed = false;
    auto rp = init_model<double>(rc, 2);
    rp.input_map.setZero();
    rp.input_map(0, 0) = 1;
    rp.input_map(1, 1) = 1;
    SequenceBatch b;
    b.size = 1;
    b.length = 1;
    b.pairs = {0.5, 1.0};
    const Array2d x = encoded(b, rc, rp);
    CHECK(x.row(0) == (Array2d(1, 4) << 0.5, 1.0, 0.0, 0.0).finished());
  }
  SUBCASE("CLS goes first") {
    auto cc = testing::small_model(ProtocolKind::chord, Pooling::cls);
    cc.use_pos_embed = false;
    auto cp = init_model<double>(cc, 3);
    cp.positional.resize(0, 0);
    const Array2d x = encoded(tokens({2}), cc, cp);
    CHECK(x.row(0) == cp.input_map.row(5));
    CHECK(x.row(1) == cp.input_map.row(2));
    CHECK_THROWS_AS(encoded(tokens({5}), cc, cp), NumericsError);
    CHECK_THROWS_AS(encoded(tokens(std::vector<std::int32_t>(16, 1)), cc, cp), NumericsError);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(encoded(tokens({6}), c, p), NumericsError);
    CHECK_THROWS_AS(encoded(tokens(std::vector<std::int32_t>(17, 1)), c, p), NumericsError);
  }
}

TEST_CASE("forward") {
  SUBCASE("zero head weights give the head bias") {
    for (auto pooling : {Pooling::flat, Pooling::cls}) {
      auto c = testing::small_model(ProtocolKind::cdil, pooling);
      auto p = init_model<double>(c, 4);
      p.head_weight.setZero();
      p.head_bias << 0.25, -1.5, 3.0;
      SplitMix64 rng(4);
      const Array2d out = predict(testing::small_batch(c, 3, rng), c, p);
      REQUIRE(out.rows() == 3);
      for (Eigen::Index r = 0; r < 3; ++r) CHECK(out.row(r) == p.head_bias.row(0));
    }
  }
  SUBCASE("identity blocks pass the embedding through") {
    auto c = testing::small_model(ProtocolKind::chord, Pooling::flat);
    auto p = init_model<double>(c, 5);
    for (auto& block : p.blocks) {
      Array2d id = Array2d::Zero(1, block.layout->links());
      id(0, 0) = 1;
      for (auto& f : block.factor_mlps) f = testing::constant_mlp(4, id);
      block.value_mlp = testing::identity_mlp(4);
    }
    SplitMix64 rng(5);
    const auto batch = testing::small_batch(c, 1, rng);
    CHECK((hidden_state(batch, c, p) - encoded(batch, c, p)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("shape law") {
    for (std::int64_t blocks : {0, 1, 3}) {
      auto c = testing::small_model(ProtocolKind::chord, Pooling::flat);
      c.blocks = blocks;
      const auto p = init_model<double>(c, 6);
      SplitMix64 rng(6);
      const Array2d h = hidden_state(testing::small_batch(c, 2, rng), c, p);
      CHECK(h.rows() == 2 * 16);
      CHECK(h.cols() == 4);
    }
  }
  SUBCASE("batched prediction equals per-sequence prediction") {
    auto c = testing::small_model(ProtocolKind::chord, Pooling::cls);
    const auto p = init_model<double>(c, 7);
    SplitMix64 rng(7);
    const auto batch = testing::small_batch(c, 3, rng);
    const Array2d all = predict(batch, c, p);
    for (std::int64_t b = 0; b < 3; ++b) {
      SequenceBatch one;
      one.size = 1;
      one.length = batch.length;
      one.tokens.assign(batch.tokens.begin() + b * batch.length, batch.tokens.begin() + (b + 1) * batch.length);
      CHECK((predict(one, c, p) - all.row(b)).cwiseAbs().maxCoeff() < 1e-13);
    }
  }
}

TEST_CASE("end-to-end gradients") {
  for (auto kind : {ProtocolKind::chord, ProtocolKind::cdil})
    for (auto pooling : {Pooling::flat, Pooling::cls})
      for (auto task : {TaskKind::classification, TaskKind::regression}) {
        auto c = testing::small_model(kind, pooling);
        c.task = task;
        for (const auto& [name, report] : testing::model_gradient_check(c, 11)) {
          CAPTURE(name);
          CAPTURE(report.worst_relative);
          CHECK(report.passed);
        }
      }
  auto real = testing::small_model(ProtocolKind::chord, Pooling::flat, InputMode::real_pair);
  for (const auto& [name, report] : testing::model_gradient_check(real, 12)) {
    CAPTURE(name);
    CHECK(report.passed);
  }
  auto ablation = testing::small_model(ProtocolKind::cdil, Pooling::flat);
  ablation.factors_from_input = false;
  for (const auto& [name, report] : testing::model_gradient_check(ablation, 13)) {
    CAPTURE(name);
    CHECK(report.passed);
  }
}

TEST_CASE("reference attention") {
  SplitMix64 rng(21);
  SUBCASE("rows are probability vectors") {
    const Array2d x = random_matrix(9, 4, rng, -3, 3);
    ReferenceAttentionParams<double> p{random_matrix(4, 3, rng), random_matrix(4, 3, rng), random_matrix(4, 5, rng)};
    Array2d a;
    const Array2d out = reference_attention(x, p, &a);
    CHECK(out.rows() == 9);
    CHECK(out.cols() == 5);
    CHECK(a.minCoeff() >= 0);
    CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  }
  SUBCASE("single token returns V") {
    const Array2d x = random_matrix(1, 4, rng);
    ReferenceAttentionParams<double> p{random_matrix(4, 2, rng), random_matrix(4, 2, rng), random_matrix(4, 3, rng)};
    CHECK((reference_attention(x, p) - x * p.value).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("zero query and key average V") {
    const Array2d x = random_matrix(2, 4, rng);
    ReferenceAttentionParams<double> p{Array2d::Zero(4, 2), Array2d::Zero(4, 2), random_matrix(4, 3, rng)};
    Array2d a;
    const Array2d out = reference_attention(x, p, &a);
    CHECK(a == Array2d::Constant(2, 2, 0.5));
    const Array2d v = x * p.value;
    CHECK((out.row(0) - 0.5 * (v.row(0) + v.row(1))).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("shape errors") {
    ReferenceAttentionParams<double> p{Array2d::Zero(3, 2), Array2d::Zero(4, 2), Array2d::Zero(4, 3)};
    CHECK_THROWS_AS(reference_attention(random_matrix(2, 4, rng), p), NumericsError);
  }
}

TEST_CASE("convex-hull contrast at N=3") {
  const auto block = testing::hull_breaking_block();
  const Array2d x = testing::hull_instance_input();
  Tape<double> t;
  const Array2d v = t.value(mlp3(t, t.constant(x), block.value_mlp));
  const Array2d mixed = apply_block(x, x, block);
  Eigen::RowVectorXd c(2);
  c << -1, 0;
  CHECK(mixed.row(0).dot(c) > testing::support(v, c));

  // Softmax rows are convex weights, so no direction separates an output row.
  SplitMix64 rng(31);
  ReferenceAttentionParams<double> p{random_matrix(2, 2, rng, -5, 5), random_matrix(2, 2, rng, -5, 5),
                                     Array2d::Identity(2, 2)};
  Array2d a;
  const Array2d ref = reference_attention(x, p, &a);
  CHECK(a.minCoeff() >= 0);
  CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  for (int dir = 0; dir < 64; ++dir) {
    const double angle = 2 * M_PI * dir / 64;
    Eigen::RowVectorXd u(2);
    u << std::cos(angle), std::sin(angle);
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(ref.row(r).dot(u) <= testing::support(x, u) + 1e-12);
  }
}

TEST_CASE("multiply counts") {
  ModelConfig c;
  c.task = TaskKind::regression;
  c.input_mode = InputMode::real_pair;
  c.seq_len = 16;
  c.width = 8;
  c.blocks = 2;
  auto e = count_flops_estimate(c);
  CHECK(e.mixing_multiplies == 2 * 4 * 16 * 5 * 8);
  CHECK(e.stored_entries_per_block == 320);
  CHECK(e.head_multiplies == 16 * 8);
  CHECK(e.total() == e.mixing_multiplies + e.mlp_multiplies + e.head_multiplies);

  for (std::int64_t n = 4; n <= 512; n *= 2) {
    c.seq_len = n;
    const double small = static_cast<double>(count_flops_estimate(c).mixing_multiplies);
    c.seq_len = 2 * n;
    const double large = static_cast<double>(count_flops_estimate(c).mixing_multiplies);
    const double log_n = std::log2(static_cast<double>(n));
    const double expected = 2 * (log_n + 1) * (log_n + 2) / (log_n * (log_n + 1));
    CHECK(large / small == doctest::Approx(expected).epsilon(1e-12));
  }
  c.blocks = 0;
  CHECK(count_flops_estimate(c).mixing_multiplies == 0);
  CHECK(count_flops_estimate(c).mlp_multiplies == 0);
}

TEST_CASE("positional table makes a trained model order-sensitive") {
  auto c = testing::small_model(ProtocolKind::chord, Pooling::flat);
  auto p = init_model<double>(c, 41);
  // Learn "is the first token smaller than the last" for a few steps.
  SplitMix64 rng(41);
  AdamState<double> adam;
  adam.options.learning_rate = 1e-2;
  for (int step = 0; step < 60; ++step) {
    auto batch = testing::small_batch(c, 8, rng);
    std::vector<std::int32_t> labels;
    for (std::int64_t b = 0; b < 8; ++b) {
      const auto first = batch.tokens[static_cast<std::size_t>(b * 16)];
      const auto last = batch.tokens[static_cast<std::size_t>(b * 16 + 15)];
      labels.push_back(first < last ? 0 : first == last ? 1 : 2);
    }
    Tape<double> t;
    const Var loss = task_loss(t, forward(t, batch, c, p), c, {}, labels);
    t.backward(loss);
    const auto tensors = p.tensors();
    std::vector<Array2d> grads;
    for (auto* tensor : tensors) grads.push_back(t.gradient(*tensor));
    adam_step<double>(tensors, grads, adam);
  }
  std::vector<std::int32_t> ids{0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5, 0, 1, 2, 3};
  const Array2d original = predict(tokens(ids), c, p);
  std::reverse(ids.begin(), ids.end());
  const Array2d reversed = predict(tokens(ids), c, p);
  CHECK((original - reversed).cwiseAbs().maxCoeff() > 1e-6);
}
