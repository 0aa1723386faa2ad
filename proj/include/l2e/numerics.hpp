#pragma once

// Small dense network: a tanh feature extractor followed by a linear softmax
// head, with hand-derived reverse-mode gradients for
//
//   loss = CE(cls batch) + gamma * MMD^2_biased(phi(Xa), phi(Xb)).
//
// Everything is double precision and single-threaded so that results are
// bitwise reproducible for a given seed.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "l2e/divergence.hpp"
#include "l2e/error.hpp"
#include "l2e/random.hpp"
#include "l2e/types.hpp"

namespace l2e {

enum class Activation { identity, tanh };

inline const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

struct Arch {
  int input_dim = 2;
  std::vector<int> hidden_dims;
  int embed_dim = 8;
  int num_classes = 2;
  Activation hidden_activation = Activation::tanh;
  Activation embed_activation = Activation::tanh;

  void validate() const {
    auto bad = [](int v) { return v < 1; };
    if (bad(input_dim) || bad(embed_dim) || bad(num_classes))
      throw ConfigError("architecture dimensions must be >= 1");
    for (int h : hidden_dims)
      if (bad(h)) throw ConfigError("hidden layer width must be >= 1");
  }

  std::size_t num_layers() const { return hidden_dims.size() + 2; }
  // Layers [0, extractor_layers()) form the extractor; the last one is the head.
  std::size_t extractor_layers() const { return hidden_dims.size() + 1; }

  int in_dim(std::size_t layer) const {
    return layer == 0 ? input_dim : out_dim(layer - 1);
  }
  int out_dim(std::size_t layer) const {
    if (layer < hidden_dims.size()) return hidden_dims[layer];
    return layer == hidden_dims.size() ? embed_dim : num_classes;
  }
  Activation activation(std::size_t layer) const {
    if (layer < hidden_dims.size()) return hidden_activation;
    return layer == hidden_dims.size() ? embed_activation : Activation::identity;
  }

  bool operator==(const Arch&) const = default;
};

struct LayerParams {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct ModelParams {
  Arch arch;
  std::vector<LayerParams> layers;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  void check_shape() const {
    if (layers.size() != arch.num_layers()) throw ShapeError("layer count does not match architecture");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != arch.out_dim(i) || layers[i].weight.cols() != arch.in_dim(i) ||
          layers[i].bias.size() != arch.out_dim(i))
        throw ShapeError("layer " + std::to_string(i) + " does not match architecture");
    }
  }

  /// Row-major weights then bias, layer by layer.
  Vector flatten() const {
    Vector flat(static_cast<Eigen::Index>(size()));
    Eigen::Index at = 0;
    for (const auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat(at++) = l.weight(r, c);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat(at++) = l.bias(r);
    }
    return flat;
  }

  static ModelParams zeros(const Arch& arch) {
    arch.validate();
    ModelParams p{arch, {}};
    for (std::size_t i = 0; i < arch.num_layers(); ++i)
      p.layers.push_back({Matrix::Zero(arch.out_dim(i), arch.in_dim(i)), Vector::Zero(arch.out_dim(i))});
    return p;
  }

  static ModelParams unflatten(const Arch& arch, const Vector& flat) {
    ModelParams p = zeros(arch);
    if (static_cast<std::size_t>(flat.size()) != p.size())
      throw ShapeError("flat vector has " + std::to_string(flat.size()) + " entries, architecture needs " +
                       std::to_string(p.size()));
    Eigen::Index at = 0;
    for (auto& l : p.layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(at++);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat(at++);
    }
    return p;
  }
};

inline bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.arch == b.arch) || a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) return false;
  return true;
}

/// Gradient with the same layout as ModelParams, plus the loss it was taken at.
struct GradVector {
  std::vector<LayerParams> layers;
  double loss = 0.0;

  static GradVector zeros_like(const ModelParams& p) {
    GradVector g;
    for (const auto& l : p.layers)
      g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return g;
  }

  GradVector& operator+=(const GradVector& o) {
    if (o.layers.size() != layers.size()) throw ShapeError("gradient layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += o.layers[i].weight;
      layers[i].bias += o.layers[i].bias;
    }
    loss += o.loss;
    return *this;
  }

  Vector flatten() const {
    ModelParams view;
    view.layers = layers;
    return view.flatten();
  }
};

struct Batch {
  Matrix features;
  std::optional<Labels> labels;
  std::optional<Vector> weights;

  Eigen::Index rows() const { return features.rows(); }

  void validate(int num_classes) const {
    if (labels) {
      if (static_cast<Eigen::Index>(labels->size()) != features.rows())
        throw ShapeError("batch has " + std::to_string(labels->size()) + " labels for " +
                         std::to_string(features.rows()) + " rows");
      for (int y : *labels)
        if (y < 0 || y >= num_classes) throw DataError("label " + std::to_string(y) + " out of range");
    }
    if (weights) {
      if (weights->size() != features.rows()) throw ShapeError("batch weight count does not match rows");
      for (Eigen::Index i = 0; i < weights->size(); ++i)
        if (!((*weights)(i) >= 0.0)) throw DataError("sample weights must be >= 0");
    }
  }
};

/// Fan-in scaled Gaussian weights (std sqrt(2 / fan_in)), zero biases.
inline ModelParams init_params(const Arch& arch, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(arch);
  Rng rng(derive_seed(seed, "init_params"));
  for (auto& l : p.layers) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(l.weight.cols())));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = normal(rng);
  }
  return p;
}

namespace detail {

// Activations of every layer boundary: acts[0] is the input, acts[i+1] the
// output of layer i.
struct Trace {
  std::vector<Matrix> acts;
};

inline Trace run_layers(const ModelParams& p, const Matrix& X, std::size_t end) {
  Trace t;
  t.acts.reserve(end + 1);
  t.acts.push_back(X);
  for (std::size_t i = 0; i < end; ++i) {
    const auto& l = p.layers[i];
    Matrix z = t.acts.back() * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    if (p.arch.activation(i) == Activation::tanh) z = z.array().tanh().matrix();
    t.acts.push_back(std::move(z));
  }
  return t;
}

// Accumulates gradients of layers [0, end) given dL/d(acts[end]).
inline void backprop(const ModelParams& p, const Trace& t, Matrix upstream, std::size_t end, GradVector& g) {
  for (std::size_t i = end; i-- > 0;) {
    if (p.arch.activation(i) == Activation::tanh)
      upstream = (upstream.array() * (1.0 - t.acts[i + 1].array().square())).matrix();
    g.layers[i].weight += upstream.transpose() * t.acts[i];
    g.layers[i].bias += upstream.colwise().sum().transpose();
    if (i > 0) upstream = upstream * p.layers[i].weight;
  }
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      probs(i, c) = std::exp(logits(i, c) - mx);
      s += probs(i, c);
    }
    probs.row(i) /= s;
  }
  return probs;
}

inline void check_input(const ModelParams& p, const Matrix& X) {
  if (X.cols() != p.arch.input_dim)
    throw ShapeError("input has " + std::to_string(X.cols()) + " columns, model expects " +
                     std::to_string(p.arch.input_dim));
}

}  // namespace detail

struct ForwardResult {
  Matrix embedding;  // m x h
  Matrix logits;     // m x C
  Matrix probs;      // m x C
};

inline ForwardResult forward(const ModelParams& p, const Matrix& X) {
  detail::check_input(p, X);
  auto t = detail::run_layers(p, X, p.arch.num_layers());
  ForwardResult r;
  r.embedding = t.acts[p.arch.extractor_layers()];
  r.logits = t.acts.back();
  r.probs = detail::softmax_rows(r.logits);
  return r;
}

inline Matrix embed(const ModelParams& p, const Matrix& X) {
  detail::check_input(p, X);
  return detail::run_layers(p, X, p.arch.extractor_layers()).acts.back();
}

/// argmax per row; ties go to the lowest class index.
inline Labels predict(const ModelParams& p, const Matrix& X) {
  Matrix logits = forward(p, X).logits;
  Labels out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// (1/m) sum_i w_i * -ln p_i[y_i]; weights default to 1.
inline double ce_loss(const Matrix& probs, const Labels& labels, const std::optional<Vector>& weights = std::nullopt) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) throw ShapeError("ce_loss: label count mismatch");
  if (weights && weights->size() != probs.rows()) throw ShapeError("ce_loss: weight count mismatch");
  if (probs.rows() == 0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw DataError("ce_loss: label " + std::to_string(y) + " out of range");
    double w = weights ? (*weights)(i) : 1.0;
    if (w == 0.0) continue;
    s -= w * std::log(probs(i, y));
  }
  return s / static_cast<double>(probs.rows());
}

/// Per-row Shannon entropy in nats with 0 ln 0 = 0.
inline Vector predict_entropy(const Matrix& probs) {
  Vector h = Vector::Zero(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      double p = probs(i, c);
      if (p > 0.0) h(i) -= p * std::log(p);
    }
  return h;
}

struct DivPair {
  const Matrix& a;
  const Matrix& b;
};

struct LossTerms {
  double classification = 0.0;
  double divergence = 0.0;  // unscaled MMD^2
};

/// Total loss CE(batch) + gamma * MMD^2(phi(a), phi(b)) and its exact gradient.
/// The kernel bandwidth should be fixed; a median-heuristic kernel is resolved
/// on the current embeddings and then treated as a constant.
inline GradVector loss_and_grad(const ModelParams& p, const Batch& cls, const std::optional<DivPair>& div,
                                double gamma, const KernelCfg& kernel, LossTerms* terms = nullptr) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!cls.labels && cls.rows() > 0) throw DataError("classification batch has no labels");
  cls.validate(p.arch.num_classes);
  detail::check_input(p, cls.features);

  GradVector g = GradVector::zeros_like(p);
  LossTerms t;

  if (cls.rows() > 0) {
    auto tr = detail::run_layers(p, cls.features, p.arch.num_layers());
    const Matrix& logits = tr.acts.back();
    const double m = static_cast<double>(cls.rows());
    Matrix upstream(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      int y = (*cls.labels)[static_cast<std::size_t>(i)];
      double w = cls.weights ? (*cls.weights)(i) : 1.0;
      double mx = logits.row(i).maxCoeff();
      double s = 0.0;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) s += std::exp(logits(i, c) - mx);
      double log_norm = mx + std::log(s);
      if (w != 0.0) t.classification += w * (log_norm - logits(i, y));
      for (Eigen::Index c = 0; c < logits.cols(); ++c)
        upstream(i, c) = w * (std::exp(logits(i, c) - log_norm) - (c == y ? 1.0 : 0.0)) / m;
    }
    t.classification /= m;
    detail::backprop(p, tr, std::move(upstream), p.arch.num_layers(), g);
  }

  if (div && gamma > 0.0) {
    if (div->a.rows() < 2 || div->b.rows() < 2) throw DataError("divergence sides need at least 2 rows each");
    detail::check_input(p, div->a);
    detail::check_input(p, div->b);
    const std::size_t e = p.arch.extractor_layers();
    auto ta = detail::run_layers(p, div->a, e);
    auto tb = detail::run_layers(p, div->b, e);
    auto mg = mmd2_grad_embeddings(ta.acts.back(), tb.acts.back(), kernel);
    t.divergence = mg.value;
    detail::backprop(p, ta, gamma * mg.d_a, e, g);
    detail::backprop(p, tb, gamma * mg.d_b, e, g);
  } else if (div) {
    // gamma == 0: the term is reported but does not enter the loss.
    if (div->a.rows() >= 1 && div->b.rows() >= 1) {
      Matrix za = embed(p, div->a), zb = embed(p, div->b);
      t.divergence = mmd2_biased(za, zb, kernel).value;
    }
  }

  g.loss = t.classification + gamma * t.divergence;
  if (!std::isfinite(t.classification)) throw NumericalError("non-finite classification loss");
  if (!std::isfinite(t.divergence)) throw NumericalError("non-finite divergence term");
  for (const auto& l : g.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw NumericalError("non-finite gradient entry");
  if (terms) *terms = t;
  return g;
}

inline ModelParams sgd_step(const ModelParams& p, const GradVector& g, double lr) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (g.layers.size() != p.layers.size()) throw ShapeError("gradient does not match parameters");
  ModelParams out = p;
  if (lr == 0.0) return out;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    if (g.layers[i].weight.rows() != p.layers[i].weight.rows() ||
        g.layers[i].weight.cols() != p.layers[i].weight.cols() || g.layers[i].bias.size() != p.layers[i].bias.size())
      throw ShapeError("gradient layer " + std::to_string(i) + " does not match parameters");
    out.layers[i].weight -= lr * g.layers[i].weight;
    out.layers[i].bias -= lr * g.layers[i].bias;
  }
  return out;
}

}  // namespace l2e
