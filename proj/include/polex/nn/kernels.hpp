#pragma once

// Layer-level forward/backward kernels. Batches are stored column-wise:
// a (features x batch) matrix holds one sample per column.

#include <cmath>
#include <string_view>

#include "polex/types.hpp"

namespace polex::nn {

enum class Activation { Identity, Tanh, Relu, Sigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw FormatError("unknown activation '" + std::string(s) + "'");
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  // Split form keeps exp() from overflowing on either tail.
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

template <typename Derived>
void activate_inplace(Eigen::MatrixBase<Derived>& m, Activation a) {
  using Scalar = typename Derived::Scalar;
  switch (a) {
    case Activation::Identity: break;
    case Activation::Tanh: m.derived() = m.array().tanh().matrix(); break;
    case Activation::Relu: m.derived() = m.array().max(Scalar(0)).matrix(); break;
    case Activation::Sigmoid: m.derived() = m.unaryExpr([](Scalar z) { return sigmoid(z); }); break;
  }
}

/// Multiplies an upstream gradient by the activation derivative, written in
/// terms of the activation's output y.
template <typename Scalar>
MatrixX<Scalar> activation_backward(const MatrixX<Scalar>& grad, const MatrixX<Scalar>& y,
                                    Activation a) {
  switch (a) {
    case Activation::Identity: return grad;
    case Activation::Tanh: return (grad.array() * (Scalar(1) - y.array().square())).matrix();
    case Activation::Relu: return (grad.array() * (y.array() > Scalar(0)).template cast<Scalar>()).matrix();
    case Activation::Sigmoid: return (grad.array() * y.array() * (Scalar(1) - y.array())).matrix();
  }
  return grad;
}

/// Column-wise softmax with max subtraction.
template <typename Scalar>
MatrixX<Scalar> softmax_columns(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Scalar m = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

template <typename Scalar>
VectorX<Scalar> softmax(const VectorX<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  VectorX<Scalar> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

template <typename Scalar>
VectorX<Scalar> log_softmax(const VectorX<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

/// Mean cross-entropy of column-wise softmax(logits) against integer labels.
/// Writes d(loss)/d(logits) into *grad when non-null.
template <typename Scalar>
Scalar softmax_cross_entropy(const MatrixX<Scalar>& logits, const std::vector<int>& labels,
                             MatrixX<Scalar>* grad) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
    throw ShapeError("softmax_cross_entropy: label count does not match batch");
  const MatrixX<Scalar> probs = softmax_columns(logits);
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(logits.cols());
  Scalar loss = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Scalar m = logits.col(j).maxCoeff();
    const Scalar lse = m + std::log((logits.col(j).array() - m).exp().sum());
    loss -= logits(labels[j], j) - lse;
  }
  if (grad) {
    *grad = probs;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) (*grad)(labels[j], j) -= Scalar(1);
    *grad *= inv_b;
  }
  return loss * inv_b;
}

/// One dense layer: y = act(W x + b).
template <typename Scalar>
MatrixX<Scalar> dense_forward(const MatrixX<Scalar>& W, const MatrixX<Scalar>& b,
                              const MatrixX<Scalar>& x, Activation a) {
  MatrixX<Scalar> z = W * x;
  z.colwise() += b.col(0);
  activate_inplace(z, a);
  return z;
}

/// Per-step cache of an LSTM layer. Gate rows are ordered [input, forget, cell, output].
template <typename Scalar>
struct LstmStep {
  MatrixX<Scalar> x;       // in x B
  MatrixX<Scalar> gates;   // 4H x B, post-activation
  MatrixX<Scalar> c;       // H x B, cell after this step
  MatrixX<Scalar> tanh_c;  // H x B
  MatrixX<Scalar> h;       // H x B
};

template <typename Scalar>
void lstm_cell_forward(const MatrixX<Scalar>& Wx, const MatrixX<Scalar>& Wh, const MatrixX<Scalar>& b,
                       const MatrixX<Scalar>& x, const MatrixX<Scalar>& h_prev,
                       const MatrixX<Scalar>& c_prev, LstmStep<Scalar>& out) {
  const Eigen::Index H = Wh.cols();
  out.x = x;
  out.gates.noalias() = Wx * x;
  out.gates.noalias() += Wh * h_prev;
  out.gates.colwise() += b.col(0);
  auto gi = out.gates.topRows(H);
  auto gf = out.gates.middleRows(H, H);
  auto gg = out.gates.middleRows(2 * H, H);
  auto go = out.gates.bottomRows(H);
  gi = gi.unaryExpr([](Scalar z) { return sigmoid(z); });
  gf = gf.unaryExpr([](Scalar z) { return sigmoid(z); });
  gg = gg.array().tanh().matrix();
  go = go.unaryExpr([](Scalar z) { return sigmoid(z); });
  out.c = (gf.array() * c_prev.array() + gi.array() * gg.array()).matrix();
  out.tanh_c = out.c.array().tanh().matrix();
  out.h = (go.array() * out.tanh_c.array()).matrix();
}

/// Backward through one cell. `dh` and `dc` carry the gradient w.r.t. this
/// step's outputs and are overwritten with the gradient w.r.t. the previous
/// step's h and c. Parameter gradients accumulate into dWx, dWh, db.
template <typename Scalar>
void lstm_cell_backward(const MatrixX<Scalar>& Wh, const LstmStep<Scalar>& step,
                        const MatrixX<Scalar>& h_prev, const MatrixX<Scalar>& c_prev,
                        MatrixX<Scalar>& dh, MatrixX<Scalar>& dc, MatrixX<Scalar>& dWx,
                        MatrixX<Scalar>& dWh, MatrixX<Scalar>& db) {
  const Eigen::Index H = Wh.cols();
  const auto i = step.gates.topRows(H).array();
  const auto f = step.gates.middleRows(H, H).array();
  const auto g = step.gates.middleRows(2 * H, H).array();
  const auto o = step.gates.bottomRows(H).array();
  const auto tc = step.tanh_c.array();

  dc = (dc.array() + dh.array() * o * (Scalar(1) - tc.square())).matrix();
  MatrixX<Scalar> dz(4 * H, dh.cols());
  dz.topRows(H) = (dc.array() * g * i * (Scalar(1) - i)).matrix();
  dz.middleRows(H, H) = (dc.array() * c_prev.array() * f * (Scalar(1) - f)).matrix();
  dz.middleRows(2 * H, H) = (dc.array() * i * (Scalar(1) - g.square())).matrix();
  dz.bottomRows(H) = (dh.array() * tc * o * (Scalar(1) - o)).matrix();

  dWx.noalias() += dz * step.x.transpose();
  dWh.noalias() += dz * h_prev.transpose();
  db += dz.rowwise().sum();
  dc = (dc.array() * f).matrix();
  dh.noalias() = Wh.transpose() * dz;
}

}  // namespace polex::nn
