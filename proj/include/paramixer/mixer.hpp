#pragma once

#include <memory>
#include <string>
#include <vector>

#include "paramixer/numerics.hpp"
#include "paramixer/protocol.hpp"

namespace paramixer {

/// One mixing block: M factor generators f_m : R^d -> R^K, a value map
/// g : R^d -> R^d and the fixed sparse layout they fill in.
template <typename Scalar>
struct MixerBlockParams {
  std::shared_ptr<const SparseLayout> layout;
  std::vector<Mlp3Params<Scalar>> factor_mlps;
  Mlp3Params<Scalar> value_mlp;

  Eigen::Index width() const { return value_mlp.input_width(); }

  void validate() const {
    if (!layout) throw NumericsError("mixer block has no layout");
    if (static_cast<std::int64_t>(factor_mlps.size()) != layout->factors())
      throw NumericsError("mixer block has " + std::to_string(factor_mlps.size()) + " factor MLPs for " +
                          std::to_string(layout->factors()) + " factors");
    for (const auto& f : factor_mlps)
      if (f.output_width() != layout->links() || f.input_width() != width())
        throw NumericsError("factor MLP shape does not match layout links / block width");
    if (value_mlp.output_width() != width()) throw NumericsError("value MLP must preserve the width");
  }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    for (std::size_t m = 0; m < factor_mlps.size(); ++m)
      factor_mlps[m].for_each_param(prefix + ".factor" + std::to_string(m + 1), f);
    value_mlp.for_each_param(prefix + ".value", f);
  }
  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) const {
    for (std::size_t m = 0; m < factor_mlps.size(); ++m)
      factor_mlps[m].for_each_param(prefix + ".factor" + std::to_string(m + 1), f);
    value_mlp.for_each_param(prefix + ".value", f);
  }
};

template <typename Scalar>
MixerBlockParams<Scalar> init_mixer_block(std::shared_ptr<const SparseLayout> layout, Eigen::Index width,
                                          Eigen::Index hidden, SplitMix64& rng) {
  MixerBlockParams<Scalar> p;
  for (std::int64_t m = 0; m < layout->factors(); ++m)
    p.factor_mlps.push_back(init_mlp3<Scalar>(width, hidden, layout->links(), rng));
  p.value_mlp = init_mlp3<Scalar>(width, hidden, width, rng);
  p.layout = std::move(layout);
  return p;
}

/// Non-zero values of every factor, aligned with layout slices:
/// values[m] is (B·N)×K for factor m+1.
template <typename Scalar>
struct FactorBank {
  std::vector<Array2<Scalar>> values;
};

/// Row-wise f_m(X0) for every factor, recorded on the tape.
template <typename Scalar>
std::vector<Var> generate_factors(Tape<Scalar>& tape, Var x0, const MixerBlockParams<Scalar>& params) {
  params.validate();
  const auto& xv = tape.value(x0);
  if (xv.cols() != params.width() || xv.rows() % params.layout->seq_len() != 0)
    throw NumericsError("factor input " + shape_string(xv.rows(), xv.cols()) + " does not fit N=" +
                        std::to_string(params.layout->seq_len()) + ", d=" + std::to_string(params.width()));
  std::vector<Var> out;
  out.reserve(params.factor_mlps.size());
  for (const auto& f : params.factor_mlps) out.push_back(mlp3(tape, x0, f));
  return out;
}

/// Untaped convenience over a single sequence or a stacked batch.
template <typename Scalar>
FactorBank<Scalar> generate_factors(const Array2<Scalar>& x0, const MixerBlockParams<Scalar>& params) {
  Tape<Scalar> tape(false);
  const auto vars = generate_factors(tape, tape.constant(x0), params);
  FactorBank<Scalar> bank;
  for (const Var v : vars) bank.values.push_back(tape.value(v));
  return bank;
}

/// X_new = W1·(W2·(...(WM·g(X_prev)))). Factors are produced from
/// `factor_input`, normally the block-0 input X0.
template <typename Scalar>
Var apply_block(Tape<Scalar>& tape, Var x_prev, Var factor_input, const MixerBlockParams<Scalar>& params) {
  const auto& xv = tape.value(x_prev);
  const auto& fv = tape.value(factor_input);
  if (xv.rows() != fv.rows() || xv.cols() != params.width())
    throw NumericsError("block input " + shape_string(xv.rows(), xv.cols()) + " vs factor input " +
                        shape_string(fv.rows(), fv.cols()));
  const auto factors = generate_factors(tape, factor_input, params);
  Var mixed = mlp3(tape, x_prev, params.value_mlp);
  for (std::size_t m = factors.size(); m-- > 0;)
    mixed = sparse_mix(tape, factors[m], params.layout->slice(static_cast<std::int64_t>(m)), mixed);
  return mixed;
}

template <typename Scalar>
Array2<Scalar> apply_block(const Array2<Scalar>& x_prev, const Array2<Scalar>& x0,
                           const MixerBlockParams<Scalar>& params) {
  Tape<Scalar> tape(false);
  return tape.value(apply_block(tape, tape.constant(x_prev), tape.constant(x0), params));
}

/// Scatter of one factor (single sequence) into a dense N×N matrix.
template <typename Scalar>
Array2<Scalar> scatter_factor(const Array2<Scalar>& values, const IndexTable& cols) {
  if (values.rows() != cols.rows() || values.cols() != cols.cols())
    throw NumericsError("factor values " + shape_string(values.rows(), values.cols()) + " do not match layout " +
                        shape_string(cols.rows(), cols.cols()));
  const Eigen::Index n = cols.rows();
  Array2<Scalar> dense = Array2<Scalar>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < cols.cols(); ++k) dense(i, cols(i, k)) += values(i, k);
  return dense;
}

/// A = W1·W2···WM as a dense N×N matrix. O(N^3); for tests and analysis.
template <typename Scalar>
Array2<Scalar> dense_attention_matrix(const FactorBank<Scalar>& bank, const SparseLayout& layout) {
  if (static_cast<std::int64_t>(bank.values.size()) != layout.factors())
    throw NumericsError("factor bank holds " + std::to_string(bank.values.size()) + " factors, layout " +
                        std::to_string(layout.factors()));
  const Eigen::Index n = layout.seq_len();
  Array2<Scalar> product = Array2<Scalar>::Identity(n, n);
  for (std::int64_t m = 0; m < layout.factors(); ++m)
    product = product * scatter_factor(bank.values[static_cast<std::size_t>(m)], layout.slice(m));
  return product;
}

}  // namespace paramixer
