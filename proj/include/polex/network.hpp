#pragma once

// Parameter bundles for MLP and LSTM-classifier networks, with forward passes
// and hand-written reverse-mode gradients.
//
// Parameter naming: layer k of kind dense owns "Lk.W" (out x in) and "Lk.b"
// (out x 1); an lstm layer owns "Lk.Wx" (4H x in), "Lk.Wh" (4H x H) and
// "Lk.b" (4H x 1).

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "polex/nn/kernels.hpp"
#include "polex/types.hpp"

namespace polex {

inline constexpr std::uint32_t kBundleVersion = 1;

enum class LayerKind { Dense, Lstm };

struct LayerDesc {
  LayerKind kind = LayerKind::Dense;
  int in = 0;
  int out = 0;
  nn::Activation act = nn::Activation::Identity;  // ignored for lstm

  bool operator==(const LayerDesc&) const = default;
};

struct Architecture {
  std::vector<LayerDesc> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  bool is_mlp() const {
    for (const auto& l : layers)
      if (l.kind != LayerKind::Dense) return false;
    return !layers.empty();
  }
  bool is_lstm_classifier() const {
    if (layers.size() < 2 || layers.front().kind != LayerKind::Lstm) return false;
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i].kind != LayerKind::Dense) return false;
    return true;
  }

  /// Text form, e.g. "dense 4 64 tanh;dense 64 2 identity".
  std::string describe() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (i) os << ';';
      if (l.kind == LayerKind::Lstm)
        os << "lstm " << l.in << ' ' << l.out;
      else
        os << "dense " << l.in << ' ' << l.out << ' ' << nn::to_string(l.act);
    }
    return os.str();
  }

  static Architecture parse(const std::string& text) {
    Architecture arch;
    std::istringstream all(text);
    std::string item;
    while (std::getline(all, item, ';')) {
      std::istringstream is(item);
      std::string kind;
      LayerDesc l;
      is >> kind >> l.in >> l.out;
      if (!is) throw FormatError("bad layer descriptor '" + item + "'");
      if (kind == "lstm") {
        l.kind = LayerKind::Lstm;
      } else if (kind == "dense") {
        std::string act;
        is >> act;
        if (!is) throw FormatError("dense layer missing activation in '" + item + "'");
        l.act = nn::parse_activation(act);
      } else {
        throw FormatError("unknown layer kind '" + kind + "'");
      }
      if (l.in <= 0 || l.out <= 0) throw FormatError("non-positive layer width in '" + item + "'");
      arch.layers.push_back(l);
    }
    for (std::size_t i = 1; i < arch.layers.size(); ++i)
      if (arch.layers[i].in != arch.layers[i - 1].out)
        throw FormatError("layer widths do not chain in '" + text + "'");
    return arch;
  }

  bool operator==(const Architecture&) const = default;
};

/// Builds "dense in h act; ...; dense h out identity".
inline Architecture mlp_architecture(int in, const std::vector<int>& hidden, int out,
                                     nn::Activation act = nn::Activation::Tanh) {
  Architecture a;
  int prev = in;
  for (int h : hidden) {
    a.layers.push_back({LayerKind::Dense, prev, h, act});
    prev = h;
  }
  a.layers.push_back({LayerKind::Dense, prev, out, nn::Activation::Identity});
  return a;
}

inline Architecture lstm_classifier_architecture(int in, int hidden, int classes) {
  Architecture a;
  a.layers.push_back({LayerKind::Lstm, in, hidden, nn::Activation::Identity});
  a.layers.push_back({LayerKind::Dense, hidden, classes, nn::Activation::Identity});
  return a;
}

template <typename Scalar>
using BasicParamSet = std::map<std::string, MatrixX<Scalar>>;
using ParamSet = BasicParamSet<double>;

template <typename Scalar>
struct BasicNetwork {
  Architecture arch;
  BasicParamSet<Scalar> params;
  std::uint32_t version = kBundleVersion;

  const MatrixX<Scalar>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  /// Throws ShapeError unless every parameter the architecture needs exists
  /// with the right shape.
  void validate() const {
    auto expect = [&](const std::string& n, Eigen::Index r, Eigen::Index c) {
      const auto& m = param(n);
      if (m.rows() != r || m.cols() != c) throw ShapeError("parameter '" + n + "' has wrong shape");
    };
    std::size_t count = 0;
    for (std::size_t k = 0; k < arch.layers.size(); ++k) {
      const auto& l = arch.layers[k];
      const std::string p = "L" + std::to_string(k) + ".";
      if (l.kind == LayerKind::Dense) {
        expect(p + "W", l.out, l.in);
        expect(p + "b", l.out, 1);
        count += 2;
      } else {
        expect(p + "Wx", 4 * l.out, l.in);
        expect(p + "Wh", 4 * l.out, l.out);
        expect(p + "b", 4 * l.out, 1);
        count += 3;
      }
    }
    if (count != params.size()) throw ShapeError("bundle has parameters the architecture does not use");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : params) n += static_cast<std::size_t>(m.size());
    return n;
  }
};

using NetworkBundle = BasicNetwork<double>;

/// Zero-valued parameter set matching `net`'s shapes.
template <typename Scalar>
BasicParamSet<Scalar> zeros_like(const BasicParamSet<Scalar>& p) {
  BasicParamSet<Scalar> out;
  for (const auto& [k, m] : p) out.emplace(k, MatrixX<Scalar>::Zero(m.rows(), m.cols()));
  return out;
}

template <typename Scalar>
Scalar squared_norm(const BasicParamSet<Scalar>& p) {
  Scalar s = 0;
  for (const auto& [_, m] : p) s += m.squaredNorm();
  return s;
}

template <typename Scalar>
bool all_finite(const BasicParamSet<Scalar>& p) {
  for (const auto& [_, m] : p)
    if (!m.allFinite()) return false;
  return true;
}

/// Rescales so the global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename Scalar>
Scalar clip_global_norm(BasicParamSet<Scalar>& p, Scalar max_norm) {
  const Scalar n = std::sqrt(squared_norm(p));
  if (max_norm > 0 && n > max_norm) {
    const Scalar s = max_norm / n;
    for (auto& [_, m] : p) m *= s;
  }
  return n;
}

template <typename Scalar>
void accumulate(BasicParamSet<Scalar>& into, const BasicParamSet<Scalar>& g, Scalar scale = Scalar(1)) {
  for (const auto& [k, m] : g) {
    auto it = into.find(k);
    if (it == into.end())
      into.emplace(k, scale * m);
    else
      it->second += scale * m;
  }
}

/// Random initialization: fan-in scaled uniform for dense kernels, orthogonal
/// blocks for recurrent kernels, zero biases. `output_gain` scales the last
/// dense layer (small values give near-uniform initial policies).
template <typename Scalar = double>
BasicNetwork<Scalar> init_network(const Architecture& arch, Rng& rng, Scalar output_gain = Scalar(1)) {
  BasicNetwork<Scalar> net;
  net.arch = arch;
  auto uniform_fill = [&](Eigen::Index r, Eigen::Index c, Scalar bound) {
    MatrixX<Scalar> m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = static_cast<Scalar>(uniform(rng, -bound, bound));
    return m;
  };
  auto orthogonal = [&](Eigen::Index n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    // Sign fix makes the draw uniform over the orthogonal group.
    const Eigen::VectorXd d = qr.matrixQR().diagonal();
    for (Eigen::Index j = 0; j < n; ++j)
      if (d[j] < 0) q.col(j) *= -1.0;
    return MatrixX<Scalar>(q.cast<Scalar>());
  };

  for (std::size_t k = 0; k < arch.layers.size(); ++k) {
    const auto& l = arch.layers[k];
    const std::string p = "L" + std::to_string(k) + ".";
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(l.in));
    if (l.kind == LayerKind::Dense) {
      const Scalar gain = (k + 1 == arch.layers.size()) ? output_gain : Scalar(1);
      net.params[p + "W"] = uniform_fill(l.out, l.in, bound) * gain;
      net.params[p + "b"] = MatrixX<Scalar>::Zero(l.out, 1);
    } else {
      net.params[p + "Wx"] = uniform_fill(4 * l.out, l.in, bound);
      MatrixX<Scalar> wh(4 * l.out, l.out);
      for (int g = 0; g < 4; ++g) wh.middleRows(g * l.out, l.out) = orthogonal(l.out);
      net.params[p + "Wh"] = wh;
      net.params[p + "b"] = MatrixX<Scalar>::Zero(4 * l.out, 1);
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// MLP

template <typename Scalar>
struct MlpTape {
  std::vector<MatrixX<Scalar>> inputs;   // input to each layer
  std::vector<MatrixX<Scalar>> outputs;  // post-activation output of each layer
};

/// Runs a dense stack over a (in x B) batch; returns (out x B).
template <typename Scalar>
MatrixX<Scalar> mlp_forward(const BasicNetwork<Scalar>& net, const MatrixX<Scalar>& x,
                            MlpTape<Scalar>* tape = nullptr) {
  if (!net.arch.is_mlp()) throw ShapeError("mlp_forward: architecture is not a dense stack");
  if (x.rows() != net.arch.input_dim())
    throw ShapeError("mlp_forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(net.arch.input_dim()));
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  MatrixX<Scalar> h = x;
  for (std::size_t k = 0; k < net.arch.layers.size(); ++k) {
    const std::string p = "L" + std::to_string(k) + ".";
    MatrixX<Scalar> y = nn::dense_forward(net.param(p + "W"), net.param(p + "b"), h, net.arch.layers[k].act);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->outputs.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

template <typename Scalar>
VectorX<Scalar> mlp_forward(const BasicNetwork<Scalar>& net, const VectorX<Scalar>& x) {
  return mlp_forward(net, MatrixX<Scalar>(x)).col(0);
}

/// Reverse pass for mlp_forward. `grad_out` is d(loss)/d(output). When
/// `grad_in` is non-null it receives d(loss)/d(input).
template <typename Scalar>
BasicParamSet<Scalar> mlp_backward(const BasicNetwork<Scalar>& net, const MlpTape<Scalar>& tape,
                                   const MatrixX<Scalar>& grad_out, MatrixX<Scalar>* grad_in = nullptr) {
  BasicParamSet<Scalar> grads;
  MatrixX<Scalar> g = grad_out;
  for (std::size_t k = net.arch.layers.size(); k-- > 0;) {
    const std::string p = "L" + std::to_string(k) + ".";
    const MatrixX<Scalar> dz = nn::activation_backward(g, tape.outputs[k], net.arch.layers[k].act);
    grads[p + "W"] = dz * tape.inputs[k].transpose();
    grads[p + "b"] = dz.rowwise().sum();
    if (k > 0 || grad_in) g = net.param(p + "W").transpose() * dz;
  }
  if (grad_in) *grad_in = std::move(g);
  return grads;
}

// ---------------------------------------------------------------------------
// LSTM classifier: one lstm layer over the sequence, dense head on the final
// hidden state, softmax on top.

template <typename Scalar>
struct LstmTape {
  std::vector<nn::LstmStep<Scalar>> steps;
  MlpTape<Scalar> head;
};

template <typename Scalar>
BasicNetwork<Scalar> lstm_head(const BasicNetwork<Scalar>& net) {
  BasicNetwork<Scalar> head;
  head.arch.layers.assign(net.arch.layers.begin() + 1, net.arch.layers.end());
  for (std::size_t k = 1; k < net.arch.layers.size(); ++k) {
    const std::string src = "L" + std::to_string(k) + ".";
    const std::string dst = "L" + std::to_string(k - 1) + ".";
    head.params[dst + "W"] = net.param(src + "W");
    head.params[dst + "b"] = net.param(src + "b");
  }
  return head;
}

/// Logits (classes x B) for a sequence of (in x B) inputs.
template <typename Scalar>
MatrixX<Scalar> lstm_logits(const BasicNetwork<Scalar>& net, const std::vector<MatrixX<Scalar>>& seq,
                            LstmTape<Scalar>* tape = nullptr) {
  if (!net.arch.is_lstm_classifier()) throw ShapeError("lstm_logits: architecture is not an lstm classifier");
  if (seq.empty()) throw ShapeError("lstm_logits: empty sequence");
  const auto& l0 = net.arch.layers.front();
  const Eigen::Index B = seq.front().cols();
  const auto& Wx = net.param("L0.Wx");
  const auto& Wh = net.param("L0.Wh");
  const auto& b = net.param("L0.b");
  MatrixX<Scalar> h = MatrixX<Scalar>::Zero(l0.out, B);
  MatrixX<Scalar> c = MatrixX<Scalar>::Zero(l0.out, B);
  nn::LstmStep<Scalar> scratch;
  if (tape) tape->steps.resize(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq[t].rows() != l0.in || seq[t].cols() != B)
      throw ShapeError("lstm_logits: sequence element " + std::to_string(t) + " has wrong shape");
    auto& step = tape ? tape->steps[t] : scratch;
    nn::lstm_cell_forward(Wx, Wh, b, seq[t], h, c, step);
    h = step.h;
    c = step.c;
  }
  const auto head = lstm_head(net);
  return mlp_forward(head, h, tape ? &tape->head : nullptr);
}

/// Class probabilities (classes x B).
template <typename Scalar>
MatrixX<Scalar> lstm_forward(const BasicNetwork<Scalar>& net, const std::vector<MatrixX<Scalar>>& seq) {
  return nn::softmax_columns(lstm_logits(net, seq));
}

/// Backpropagation through time from d(loss)/d(logits).
template <typename Scalar>
BasicParamSet<Scalar> lstm_backward(const BasicNetwork<Scalar>& net, const LstmTape<Scalar>& tape,
                                    const MatrixX<Scalar>& grad_logits) {
  const auto head = lstm_head(net);
  MatrixX<Scalar> dh;
  BasicParamSet<Scalar> head_grads = mlp_backward(head, tape.head, grad_logits, &dh);
  BasicParamSet<Scalar> grads;
  for (std::size_t k = 1; k < net.arch.layers.size(); ++k) {
    const std::string src = "L" + std::to_string(k - 1) + ".";
    const std::string dst = "L" + std::to_string(k) + ".";
    grads[dst + "W"] = std::move(head_grads[src + "W"]);
    grads[dst + "b"] = std::move(head_grads[src + "b"]);
  }
  const auto& Wx = net.param("L0.Wx");
  const auto& Wh = net.param("L0.Wh");
  const Eigen::Index H = Wh.cols();
  const Eigen::Index B = dh.cols();
  MatrixX<Scalar> dWx = MatrixX<Scalar>::Zero(Wx.rows(), Wx.cols());
  MatrixX<Scalar> dWh = MatrixX<Scalar>::Zero(Wh.rows(), Wh.cols());
  MatrixX<Scalar> db = MatrixX<Scalar>::Zero(Wh.rows(), 1);
  MatrixX<Scalar> dc = MatrixX<Scalar>::Zero(H, B);
  const MatrixX<Scalar> zero = MatrixX<Scalar>::Zero(H, B);
  for (std::size_t t = tape.steps.size(); t-- > 0;) {
    const auto& h_prev = t ? tape.steps[t - 1].h : zero;
    const auto& c_prev = t ? tape.steps[t - 1].c : zero;
    nn::lstm_cell_backward(Wh, tape.steps[t], h_prev, c_prev, dh, dc, dWx, dWh, db);
  }
  grads["L0.Wx"] = std::move(dWx);
  grads["L0.Wh"] = std::move(dWh);
  grads["L0.b"] = std::move(db);
  return grads;
}

// ---------------------------------------------------------------------------
// Generic loss/gradient entry points.

template <typename Scalar>
struct LossGrad {
  Scalar loss;
  MatrixX<Scalar> grad;  // d(loss)/d(network output)
};

template <typename Scalar>
struct Gradients {
  Scalar loss;
  BasicParamSet<Scalar> params;
};

/// Reverse-mode gradients of loss_fn(mlp(input)) w.r.t. every parameter.
/// loss_fn maps the network output to {loss, d loss / d output}.
template <typename Scalar, typename LossFn>
Gradients<Scalar> gradients(const BasicNetwork<Scalar>& net, const MatrixX<Scalar>& input, LossFn&& loss_fn) {
  MlpTape<Scalar> tape;
  const MatrixX<Scalar> out = mlp_forward(net, input, &tape);
  LossGrad<Scalar> lg = loss_fn(out);
  if (!std::isfinite(lg.loss)) throw NumericError("gradients: non-finite loss");
  return {lg.loss, mlp_backward(net, tape, lg.grad)};
}

/// Sequence overload: loss_fn receives the lstm classifier's logits.
template <typename Scalar, typename LossFn>
Gradients<Scalar> gradients(const BasicNetwork<Scalar>& net, const std::vector<MatrixX<Scalar>>& seq,
                            LossFn&& loss_fn) {
  LstmTape<Scalar> tape;
  const MatrixX<Scalar> logits = lstm_logits(net, seq, &tape);
  LossGrad<Scalar> lg = loss_fn(logits);
  if (!std::isfinite(lg.loss)) throw NumericError("gradients: non-finite loss");
  return {lg.loss, lstm_backward(net, tape, lg.grad)};
}

}  // namespace polex
