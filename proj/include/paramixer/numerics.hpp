#pragma once

// Dense differentiable core: row-major arrays, a reverse-mode tape and the
// handful of primitives the mixer network is built from.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "paramixer/protocol.hpp"
#include "paramixer/random.hpp"

namespace paramixer {

template <typename Scalar>
using Array2 = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Array2d = Array2<double>;

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Records primitive ops in execution order; backward() replays their
/// adjoints in reverse. Parameters are referenced, not copied, and must
/// outlive the tape. One tape serves exactly one backward pass.
template <typename Scalar>
class Tape {
 public:
  using Matrix = Array2<Scalar>;
  /// Called with the tape and the gradient flowing into the node's output.
  using Adjoint = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  /// With `track_gradients` false, parameters are plain leaves and no
  /// adjoint is stored; backward() then yields zero gradients.
  explicit Tape(bool track_gradients) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Matrix value) {
    check_finite(value, "constant");
    return push(Node{std::move(value), nullptr, false, {}});
  }

  /// Registers `p` as a trainable leaf. Registering the same object twice
  /// yields the same Var so gradients accumulate in one place.
  Var parameter(const Matrix& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
    check_finite(p, "parameter");
    const Var v = push(Node{Matrix{}, &p, track_, {}});
    params_.emplace(&p, v.id);
    return v;
  }

  /// Appends the result of a primitive. The adjoint is dropped when no
  /// input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Adjoint adjoint, const char* op) {
    check_finite(value, op);
    bool needs = false;
    for (const Var in : inputs) needs = needs || requires_grad(in);
    return push(Node{std::move(value), nullptr, needs, needs ? std::move(adjoint) : Adjoint{}});
  }

  const Matrix& value(Var v) const {
    const Node& n = node(v);
    return n.external != nullptr ? *n.external : n.owned;
  }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient accumulator of `v`, zero-filled on first touch. Only valid
  /// inside adjoints.
  Matrix& grad(Var v) {
    Matrix& g = grads_.at(v.id);
    if (g.size() == 0) {
      const Matrix& val = value(v);
      g = Matrix::Zero(val.rows(), val.cols());
    }
    return g;
  }

  /// Gradient of the loss with respect to a registered parameter; zero if
  /// the parameter did not influence the loss.
  Matrix gradient(const Matrix& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) throw NumericsError("parameter was not registered on this tape");
    if (!consumed_) throw NumericsError("gradient requested before backward()");
    const Matrix& g = grads_[it->second];
    return g.size() == 0 ? Matrix::Zero(p.rows(), p.cols()) : g;
  }

  void backward(Var loss) {
    if (consumed_) throw NumericsError("tape already consumed by a previous backward()");
    const Matrix& out = value(loss);
    if (out.rows() != 1 || out.cols() != 1)
      throw NumericsError("backward() needs a scalar loss, got " + shape_string(out.rows(), out.cols()));
    consumed_ = true;
    grads_.assign(nodes_.size(), Matrix{});
    if (!nodes_[loss.id].requires_grad) return;
    grads_[loss.id] = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.adjoint && grads_[i].size() != 0) n.adjoint(*this, grads_[i]);
      n.adjoint = nullptr;
      // Intermediate gradients are not needed once propagated.
      if (n.external == nullptr) grads_[i] = Matrix{};
    }
  }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external;
    bool requires_grad;
    Adjoint adjoint;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw NumericsError("Var does not belong to this tape");
    return nodes_[v.id];
  }

  Var push(Node n) {
    if (consumed_) throw NumericsError("cannot record on a consumed tape");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  static void check_finite(const Matrix& m, const char* op) {
    // x·0 is NaN exactly when x is not finite, and NaN survives the sum.
    if (m.size() > 0 && !((m.array() * Scalar(0)).sum() == Scalar(0)))
      throw NumericsError(std::string("non-finite value produced by ") + op);
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  std::unordered_map<const Matrix*, std::size_t> params_;
  bool consumed_ = false;
  bool track_ = true;
};

// ---------------------------------------------------------------------------
// Primitives

template <typename Scalar>
Var matmul(Tape<Scalar>& tape, Var x, Var w) {
  using Matrix = Array2<Scalar>;
  const Matrix& xv = tape.value(x);
  const Matrix& wv = tape.value(w);
  if (xv.cols() != wv.rows())
    throw NumericsError("matmul shape mismatch: " + shape_string(xv.rows(), xv.cols()) + " * " +
                        shape_string(wv.rows(), wv.cols()));
  Matrix out = xv * wv;
  return tape.record(
      std::move(out), {x, w},
      [x, w](Tape<Scalar>& t, const Matrix& g) {
        if (t.requires_grad(x)) t.grad(x).noalias() += g * t.value(w).transpose();
        if (t.requires_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * g;
      },
      "matmul");
}

/// x + bias broadcast over rows; bias is 1×cols.
template <typename Scalar>
Var add_row_bias(Tape<Scalar>& tape, Var x, Var bias) {
  using Matrix = Array2<Scalar>;
  const Matrix& xv = tape.value(x);
  const Matrix& bv = tape.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw NumericsError("bias shape " + shape_string(bv.rows(), bv.cols()) + " does not fit " +
                        shape_string(xv.rows(), xv.cols()));
  Matrix out = xv.rowwise() + bv.row(0);
  return tape.record(
      std::move(out), {x, bias},
      [x, bias](Tape<Scalar>& t, const Matrix& g) {
        if (t.requires_grad(x)) t.grad(x) += g;
        if (t.requires_grad(bias)) t.grad(bias) += g.colwise().sum();
      },
      "add_row_bias");
}

/// X·W + b.
template <typename Scalar>
Var linear(Tape<Scalar>& tape, Var x, Var w, Var bias) {
  return add_row_bias(tape, matmul(tape, x, w), bias);
}

template <typename Scalar>
Scalar gelu_value(Scalar x) {
  using std::erf;
  return x * Scalar(0.5) * (Scalar(1) + erf(x * Scalar(std::numbers::sqrt2 / 2)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  using std::erf;
  using std::exp;
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + erf(x * Scalar(std::numbers::sqrt2 / 2)));
  const Scalar pdf = exp(Scalar(-0.5) * x * x) * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

/// Exact GELU, x·Φ(x). The derivative is kept from the forward pass.
template <typename Scalar>
Var gelu(Tape<Scalar>& tape, Var x) {
  using Matrix = Array2<Scalar>;
  using std::erf;
  using std::exp;
  const Matrix& xv = tape.value(x);
  Matrix out(xv.rows(), xv.cols());
  const Scalar* in = xv.data();
  for (Eigen::Index i = 0; i < xv.size(); ++i)
    out.data()[i] = in[i] * Scalar(0.5) * (Scalar(1) + erf(in[i] * Scalar(std::numbers::sqrt2 / 2)));
  if (!tape.requires_grad(x)) return tape.record(std::move(out), {x}, {}, "gelu");
  // Φ(x) = out / x away from zero; recompute it there to avoid 0/0.
  Matrix slope = (Scalar(-0.5) * xv.array().square()).exp() * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const Scalar v = in[i];
    const Scalar cdf = std::abs(v) > Scalar(1e-3) ? out.data()[i] / v
                                                  : Scalar(0.5) * (Scalar(1) + erf(v * Scalar(std::numbers::sqrt2 / 2)));
    slope.data()[i] = cdf + v * slope.data()[i];
  }
  return tape.record(
      std::move(out), {x},
      [x, slope = std::move(slope)](Tape<Scalar>& t, const Matrix& g) { t.grad(x).array() += g.array() * slope.array(); },
      "gelu");
}

/// a + b where b's rows tile a's rows (b.rows() divides a.rows()).
template <typename Scalar>
Var add_tiled(Tape<Scalar>& tape, Var a, Var b) {
  using Matrix = Array2<Scalar>;
  const Matrix& av = tape.value(a);
  const Matrix& bv = tape.value(b);
  if (bv.cols() != av.cols() || bv.rows() == 0 || av.rows() % bv.rows() != 0)
    throw NumericsError("add_tiled shape mismatch: " + shape_string(av.rows(), av.cols()) + " + " +
                        shape_string(bv.rows(), bv.cols()));
  const Eigen::Index period = bv.rows();
  Matrix out = av;
  for (Eigen::Index start = 0; start < av.rows(); start += period) out.middleRows(start, period) += bv;
  return tape.record(
      std::move(out), {a, b},
      [a, b, period](Tape<Scalar>& t, const Matrix& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) {
          Matrix& gb = t.grad(b);
          for (Eigen::Index start = 0; start < g.rows(); start += period) gb += g.middleRows(start, period);
        }
      },
      "add_tiled");
}

/// Row-major reinterpretation to rows×cols.
template <typename Scalar>
Var reshape(Tape<Scalar>& tape, Var x, Eigen::Index rows, Eigen::Index cols) {
  using Matrix = Array2<Scalar>;
  const Matrix& xv = tape.value(x);
  if (rows * cols != xv.size())
    throw NumericsError("cannot reshape " + shape_string(xv.rows(), xv.cols()) + " to " + shape_string(rows, cols));
  Matrix out = Eigen::Map<const Matrix>(xv.data(), rows, cols);
  const Eigen::Index in_rows = xv.rows();
  const Eigen::Index in_cols = xv.cols();
  return tape.record(
      std::move(out), {x},
      [x, in_rows, in_cols](Tape<Scalar>& t, const Matrix& g) {
        t.grad(x) += Eigen::Map<const Matrix>(g.data(), in_rows, in_cols);
      },
      "reshape");
}

/// out.row(r) = table.row(index[r]); covers embedding lookup and row selection.
template <typename Scalar>
Var gather_rows(Tape<Scalar>& tape, Var table, std::vector<std::int32_t> index) {
  using Matrix = Array2<Scalar>;
  const Matrix& tv = tape.value(table);
  Matrix out(static_cast<Eigen::Index>(index.size()), tv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= tv.rows())
      throw NumericsError("gather index " + std::to_string(index[r]) + " outside 0.." + std::to_string(tv.rows() - 1));
    out.row(static_cast<Eigen::Index>(r)) = tv.row(index[r]);
  }
  return tape.record(
      std::move(out), {table},
      [table, index = std::move(index)](Tape<Scalar>& t, const Matrix& g) {
        Matrix& gt = t.grad(table);
        for (std::size_t r = 0; r < index.size(); ++r) gt.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
      },
      "gather_rows");
}

/// One sparse factor applied to a batch of sequences stacked along rows.
/// With N = cols.rows(), values is (B·N)×K, v is (B·N)×d and
///   out[bN+i] = sum_k values[bN+i][k] · v[bN + cols(i,k)]
/// accumulated in ascending k; repeated columns add up.
/// `cols` must outlive the tape.
template <typename Scalar>
Var sparse_mix(Tape<Scalar>& tape, Var values, const IndexTable& cols, Var v) {
  using Matrix = Array2<Scalar>;
  const Matrix& wv = tape.value(values);
  const Matrix& vv = tape.value(v);
  const Eigen::Index n = cols.rows();
  const Eigen::Index k_links = cols.cols();
  if (n == 0 || wv.cols() != k_links || wv.rows() != vv.rows() || vv.rows() % n != 0)
    throw NumericsError("sparse_mix shape mismatch: values " + shape_string(wv.rows(), wv.cols()) + ", columns " +
                        shape_string(n, k_links) + ", V " + shape_string(vv.rows(), vv.cols()));
  if (cols.size() > 0 && (cols.minCoeff() < 0 || cols.maxCoeff() >= n))
    throw NumericsError("sparse_mix column index outside [0, " + std::to_string(n) + ")");
  const Eigen::Index batch = vv.rows() / n;
  const Eigen::Index d = vv.cols();
  Matrix out = Matrix::Zero(vv.rows(), d);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index base = b * n;
    for (Eigen::Index i = 0; i < n; ++i) {
      Scalar* dst = out.data() + (base + i) * d;
      for (Eigen::Index k = 0; k < k_links; ++k) {
        const Scalar w = wv(base + i, k);
        const Scalar* src = vv.data() + (base + cols(i, k)) * d;
        for (Eigen::Index j = 0; j < d; ++j) dst[j] += w * src[j];
      }
    }
  }
  const IndexTable* cols_ptr = &cols;
  return tape.record(
      std::move(out), {values, v},
      [values, v, cols_ptr, batch](Tape<Scalar>& t, const Matrix& g) {
        const IndexTable& c = *cols_ptr;
        const Eigen::Index nn = c.rows();
        const Matrix& wv_ = t.value(values);
        const Matrix& vv_ = t.value(v);
        const Eigen::Index d_ = vv_.cols();
        Matrix* gw = t.requires_grad(values) ? &t.grad(values) : nullptr;
        Matrix* gv = t.requires_grad(v) ? &t.grad(v) : nullptr;
        for (Eigen::Index b = 0; b < batch; ++b) {
          const Eigen::Index base = b * nn;
          for (Eigen::Index i = 0; i < nn; ++i) {
            const Scalar* gr = g.data() + (base + i) * d_;
            for (Eigen::Index k = 0; k < c.cols(); ++k) {
              const Eigen::Index src = base + c(i, k);
              if (gw != nullptr) {
                const Scalar* vr = vv_.data() + src * d_;
                Scalar acc = 0;
                for (Eigen::Index j = 0; j < d_; ++j) acc += gr[j] * vr[j];
                (*gw)(base + i, k) += acc;
              }
              if (gv != nullptr) {
                const Scalar w = wv_(base + i, k);
                Scalar* dst = gv->data() + src * d_;
                for (Eigen::Index j = 0; j < d_; ++j) dst[j] += w * gr[j];
              }
            }
          }
        }
      },
      "sparse_mix");
}

/// Sum of all entries, as a 1×1 node.
template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x) {
  using Matrix = Array2<Scalar>;
  Matrix out(1, 1);
  out(0, 0) = tape.value(x).sum();
  return tape.record(
      std::move(out), {x}, [x](Tape<Scalar>& t, const Matrix& g) { t.grad(x).array() += g(0, 0); }, "sum");
}

/// Mean of squared differences over all entries.
template <typename Scalar>
Var mse(Tape<Scalar>& tape, Var pred, const Array2<Scalar>& target) {
  using Matrix = Array2<Scalar>;
  const Matrix& pv = tape.value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols() || pv.size() == 0)
    throw NumericsError("mse shape mismatch: " + shape_string(pv.rows(), pv.cols()) + " vs " +
                        shape_string(target.rows(), target.cols()));
  Matrix diff = pv - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / Scalar(diff.size());
  return tape.record(
      std::move(out), {pred},
      [pred, diff = std::move(diff)](Tape<Scalar>& t, const Matrix& g) {
        t.grad(pred) += (Scalar(2) * g(0, 0) / Scalar(diff.size())) * diff;
      },
      "mse");
}

/// Row-wise softmax with the max shift.
template <typename Scalar>
Array2<Scalar> softmax_rows(const Array2<Scalar>& logits) {
  Array2<Scalar> out = logits.colwise() - logits.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

/// Mean over rows of -log softmax(logits)[label].
template <typename Scalar>
Var cross_entropy(Tape<Scalar>& tape, Var logits, std::span<const std::int32_t> labels) {
  using Matrix = Array2<Scalar>;
  using std::exp;
  using std::log;
  const Matrix& lv = tape.value(logits);
  if (lv.rows() != static_cast<Eigen::Index>(labels.size()) || lv.rows() == 0)
    throw NumericsError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(lv.rows()) + " rows");
  Scalar total = 0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const auto label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= lv.cols())
      throw NumericsError("label " + std::to_string(label) + " outside [0, " + std::to_string(lv.cols()) + ")");
    const Scalar shift = lv.row(r).maxCoeff();
    const Scalar lse = shift + log((lv.row(r).array() - shift).exp().sum());
    total += lse - lv(r, label);
  }
  Matrix out(1, 1);
  out(0, 0) = total / Scalar(lv.rows());
  Matrix probs = softmax_rows(lv);
  for (Eigen::Index r = 0; r < lv.rows(); ++r) probs(r, labels[static_cast<std::size_t>(r)]) -= Scalar(1);
  probs /= Scalar(lv.rows());
  return tape.record(
      std::move(out), {logits},
      [logits, delta = std::move(probs)](Tape<Scalar>& t, const Matrix& g) { t.grad(logits) += g(0, 0) * delta; },
      "cross_entropy");
}

// ---------------------------------------------------------------------------
// Parameters, initialization, optimizer

/// Linear-GELU-Linear weights. Biases are 1×width.
template <typename Scalar>
struct Mlp3Params {
  Array2<Scalar> w1, b1, w2, b2;

  Eigen::Index input_width() const { return w1.rows(); }
  Eigen::Index output_width() const { return w2.cols(); }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
  }
  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) const {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
  }
};

template <typename Scalar>
Var mlp3(Tape<Scalar>& tape, Var x, const Mlp3Params<Scalar>& p) {
  if (p.w1.cols() != p.w2.rows() || p.b1.cols() != p.w1.cols() || p.b2.cols() != p.w2.cols())
    throw NumericsError("mlp3 parameter shapes do not chain");
  const Var h = gelu(tape, linear(tape, x, tape.parameter(p.w1), tape.parameter(p.b1)));
  return linear(tape, h, tape.parameter(p.w2), tape.parameter(p.b2));
}

/// Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
template <typename Scalar>
Array2<Scalar> glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, SplitMix64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array2<Scalar> w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(rng.uniform(-s, s));
  return w;
}

template <typename Scalar>
Mlp3Params<Scalar> init_mlp3(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, SplitMix64& rng) {
  Mlp3Params<Scalar> p;
  p.w1 = glorot_uniform<Scalar>(in, hidden, rng);
  p.b1 = Array2<Scalar>::Zero(1, hidden);
  p.w2 = glorot_uniform<Scalar>(hidden, out, rng);
  p.b2 = Array2<Scalar>::Zero(1, out);
  return p;
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Array2<Scalar>> first_moment;
  std::vector<Array2<Scalar>> second_moment;
};

/// One bias-corrected Adam update. Moments are created on the first call.
template <typename Scalar>
void adam_step(std::span<Array2<Scalar>* const> params, std::span<const Array2<Scalar>> grads,
               AdamState<Scalar>& state) {
  using std::sqrt;
  if (params.size() != grads.size()) throw NumericsError("adam_step: parameter/gradient count mismatch");
  if (state.step < 0) throw NumericsError("adam_step: negative step counter");
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto* p : params) {
      state.first_moment.push_back(Array2<Scalar>::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Array2<Scalar>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw NumericsError("adam_step: state holds a different parameter set");
  const auto& o = state.options;
  state.step += 1;
  const Scalar b1 = Scalar(o.beta1);
  const Scalar b2 = Scalar(o.beta2);
  const Scalar correction1 = Scalar(1) - Scalar(std::pow(o.beta1, static_cast<double>(state.step)));
  const Scalar correction2 = Scalar(1) - Scalar(std::pow(o.beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Array2<Scalar>& p = *params[i];
    const Array2<Scalar>& g = grads[i];
    Array2<Scalar>& m = state.first_moment[i];
    Array2<Scalar>& v = state.second_moment[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || m.rows() != p.rows() || m.cols() != p.cols())
      throw NumericsError("adam_step: shape mismatch for parameter " + std::to_string(i));
    m = b1 * m + (Scalar(1) - b1) * g;
    v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
    p.array() -= Scalar(o.learning_rate) * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + Scalar(o.epsilon));
  }
}

}  // namespace paramixer
