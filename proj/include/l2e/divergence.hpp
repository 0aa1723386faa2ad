#pragma once

// Empirical domain-discrepancy estimators.
//
// The rbf MMD estimators double as a training loss (through
// numerics::loss_and_grad) and as a measurement tool. The proxy domain
// classifier is measurement only. The discrete L1 and Jensen-Shannon
// divergences are exact and serve the bound calculator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "l2e/error.hpp"
#include "l2e/random.hpp"
#include "l2e/types.hpp"

namespace l2e {

struct KernelCfg {
  // nullopt selects the median heuristic on the pooled sample.
  std::optional<double> bandwidth;
  // When non-empty the kernel is the mean of rbf kernels at bandwidth * m_i.
  std::vector<double> multipliers;

  static KernelCfg median() { return {}; }
  static KernelCfg fixed(double bw, std::vector<double> mult = {}) { return {bw, std::move(mult)}; }

  void validate() const {
    if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth)))
      throw ConfigError("kernel bandwidth must be positive, got " + std::to_string(*bandwidth));
    for (double m : multipliers)
      if (!(m > 0.0 && std::isfinite(m)))
        throw ConfigError("kernel bandwidth multipliers must be positive");
  }
};

enum class Estimator { mmd2_biased, mmd2_unbiased, proxy_domain_classifier, cond_mmd, l1_discrete };

inline const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::mmd2_biased: return "mmd2_biased";
    case Estimator::mmd2_unbiased: return "mmd2_unbiased";
    case Estimator::proxy_domain_classifier: return "proxy_domain_classifier";
    case Estimator::cond_mmd: return "cond_mmd";
    case Estimator::l1_discrete: return "l1_discrete";
  }
  return "unknown";
}

struct DivergenceEstimate {
  double value = 0.0;
  Estimator estimator = Estimator::mmd2_biased;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
  double bandwidth = 0.0;
  // cond_mmd only: classes present on one side only, and their share of rows.
  std::size_t skipped_classes = 0;
  double skipped_mass = 0.0;
};

/// Mixture of rbf kernels k(u,v) = mean_i exp(-|u-v|^2 / (2 s_i^2)).
class RbfKernel {
 public:
  RbfKernel(double bandwidth, const std::vector<double>& multipliers) {
    if (multipliers.empty()) {
      inv_two_var_.push_back(1.0 / (2.0 * bandwidth * bandwidth));
    } else {
      for (double m : multipliers) {
        double s = bandwidth * m;
        inv_two_var_.push_back(1.0 / (2.0 * s * s));
      }
    }
    weight_ = 1.0 / static_cast<double>(inv_two_var_.size());
  }

  double value(double sqdist) const {
    double k = 0.0;
    for (double c : inv_two_var_) k += std::exp(-sqdist * c);
    return weight_ * k;
  }

  // dk(u,v)/du = -slope(|u-v|^2) * (u - v)
  double slope(double sqdist) const {
    double s = 0.0;
    for (double c : inv_two_var_) s += std::exp(-sqdist * c) * 2.0 * c;
    return weight_ * s;
  }

  // Elementwise value and slope over a matrix of squared distances.
  void evaluate(const Matrix& sqdist, Matrix& value, Matrix& slope) const {
    value = Matrix::Zero(sqdist.rows(), sqdist.cols());
    slope = Matrix::Zero(sqdist.rows(), sqdist.cols());
    for (double c : inv_two_var_) {
      const Matrix e = (-c * sqdist).array().exp().matrix();
      value += e;
      slope += (2.0 * c) * e;
    }
    value *= weight_;
    slope *= weight_;
  }

 private:
  std::vector<double> inv_two_var_;
  double weight_ = 1.0;
};

namespace detail {

inline double sqdist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

// All squared distances through the Gram matrix; rounding can leave tiny
// negative entries, which are clipped to zero.
inline Matrix pairwise_sqdist(const Matrix& x, const Matrix& y) {
  Matrix d = -2.0 * x * y.transpose();
  d.colwise() += x.rowwise().squaredNorm();
  d.rowwise() += y.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

inline void require_same_width(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols())
    throw ShapeError("divergence inputs differ in width: " + std::to_string(x.cols()) + " vs " +
                     std::to_string(y.cols()));
}

// Sum of k over all (i, j), optionally skipping i == j.
inline double kernel_sum(const Matrix& a, const Matrix& b, const RbfKernel& k, bool skip_diagonal) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (skip_diagonal && i == j) continue;
      s += k.value(sqdist(a, i, b, j));
    }
  return s;
}

// Same-set sum exploiting symmetry; the diagonal contributes k(0) per row.
inline double self_kernel_sum(const Matrix& a, const RbfKernel& k, bool skip_diagonal) {
  double off = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) off += k.value(sqdist(a, i, a, j));
  double diag = skip_diagonal ? 0.0 : static_cast<double>(a.rows()) * k.value(0.0);
  return 2.0 * off + diag;
}

}  // namespace detail

/// Median of pairwise Euclidean distances over the pooled rows of X and Y,
/// ignoring zero distances. Falls back to 1.0 when every distance is zero.
inline double median_heuristic(const Matrix& X, const Matrix& Y) {
  if (X.rows() + Y.rows() == 0) throw DataError("median_heuristic: empty pooled set");
  if (X.rows() > 0 && Y.rows() > 0) detail::require_same_width(X, Y);
  Matrix pooled = vstack(X, Y);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) {
      double d = std::sqrt(detail::sqdist(pooled, i, pooled, j));
      if (d > 0.0) dist.push_back(d);
    }
  if (dist.empty()) return 1.0;
  std::size_t n = dist.size();
  std::size_t mid = n / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double hi = dist[mid];
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline double resolve_bandwidth(const Matrix& X, const Matrix& Y, const KernelCfg& cfg) {
  cfg.validate();
  return cfg.bandwidth ? *cfg.bandwidth : median_heuristic(X, Y);
}

inline DivergenceEstimate mmd2_biased(const Matrix& X, const Matrix& Y, const KernelCfg& cfg) {
  if (X.rows() < 1 || Y.rows() < 1) throw DataError("mmd2_biased needs at least one row per side");
  detail::require_same_width(X, Y);
  double bw = resolve_bandwidth(X, Y, cfg);
  RbfKernel k(bw, cfg.multipliers);
  double ma = static_cast<double>(X.rows());
  double mb = static_cast<double>(Y.rows());
  double value = detail::self_kernel_sum(X, k, false) / (ma * ma) +
                 detail::self_kernel_sum(Y, k, false) / (mb * mb) -
                 2.0 * detail::kernel_sum(X, Y, k, false) / (ma * mb);
  if (X.rows() == Y.rows() && X == Y) value = 0.0;
  if (value < 0.0) {
    if (value < -1e-12) throw NumericalError("mmd2_biased came out negative: " + std::to_string(value));
    value = 0.0;
  }
  return {value, Estimator::mmd2_biased, static_cast<std::size_t>(X.rows()),
          static_cast<std::size_t>(Y.rows()), bw};
}

inline DivergenceEstimate mmd2_unbiased(const Matrix& X, const Matrix& Y, const KernelCfg& cfg) {
  if (X.rows() < 2 || Y.rows() < 2) throw DataError("mmd2_unbiased needs at least two rows per side");
  detail::require_same_width(X, Y);
  double bw = resolve_bandwidth(X, Y, cfg);
  RbfKernel k(bw, cfg.multipliers);
  double ma = static_cast<double>(X.rows());
  double mb = static_cast<double>(Y.rows());
  double value = detail::self_kernel_sum(X, k, true) / (ma * (ma - 1.0)) +
                 detail::self_kernel_sum(Y, k, true) / (mb * (mb - 1.0)) -
                 2.0 * detail::kernel_sum(X, Y, k, false) / (ma * mb);
  return {value, Estimator::mmd2_unbiased, static_cast<std::size_t>(X.rows()),
          static_cast<std::size_t>(Y.rows()), bw};
}

struct MmdGradient {
  double value = 0.0;
  Matrix d_a;
  Matrix d_b;
};

/// Biased MMD^2 together with its exact gradient with respect to every row of
/// both embedding sets. The bandwidth must be resolved by the caller.
inline MmdGradient mmd2_grad_embeddings(const Matrix& Za, const Matrix& Zb, const KernelCfg& cfg) {
  if (Za.rows() < 1 || Zb.rows() < 1) throw DataError("mmd2_grad_embeddings needs at least one row per side");
  detail::require_same_width(Za, Zb);
  double bw = resolve_bandwidth(Za, Zb, cfg);
  RbfKernel k(bw, cfg.multipliers);
  const double ma = static_cast<double>(Za.rows());
  const double mb = static_cast<double>(Zb.rows());

  // Kernel values K and slopes S (dk(u,v)/du = -S * (u - v)) for every pair.
  Matrix Kaa, Saa, Kbb, Sbb, Kab, Sab;
  k.evaluate(detail::pairwise_sqdist(Za, Za), Kaa, Saa);
  k.evaluate(detail::pairwise_sqdist(Zb, Zb), Kbb, Sbb);
  k.evaluate(detail::pairwise_sqdist(Za, Zb), Kab, Sab);

  // d/dz_i sum_j S_ij-weighted pulls: (sum_j S_ij) z_i - sum_j S_ij z_j.
  auto pull = [](const Matrix& S, const Matrix& Z, const Matrix& Y, const Vector& row_sums) {
    Matrix out = -(S * Y);
    out += row_sums.asDiagonal() * Z;
    return out;
  };
  const double within_a = 2.0 / (ma * ma), within_b = 2.0 / (mb * mb), cross = 2.0 / (ma * mb);
  MmdGradient g;
  g.d_a = -within_a * pull(Saa, Za, Za, Saa.rowwise().sum()) + cross * pull(Sab, Za, Zb, Sab.rowwise().sum());
  g.d_b = -within_b * pull(Sbb, Zb, Zb, Sbb.rowwise().sum()) +
          cross * pull(Sab.transpose(), Zb, Za, Sab.colwise().sum().transpose());

  g.value = Kaa.sum() / (ma * ma) + Kbb.sum() / (mb * mb) - 2.0 * Kab.sum() / (ma * mb);
  if (Za.rows() == Zb.rows() && Za == Zb) g.value = 0.0;
  if (g.value < 0.0) {
    if (g.value < -1e-12) throw NumericalError("mmd2 came out negative: " + std::to_string(g.value));
    g.value = 0.0;
  }
  return g;
}

namespace detail {

struct LogisticModel {
  Vector w;
  double b = 0.0;
};

// Full-batch gradient descent on mean logistic loss with a small ridge term.
inline LogisticModel fit_logistic(const Matrix& X, const std::vector<int>& y, int iterations, double lr,
                                  double ridge) {
  LogisticModel model{Vector::Zero(X.cols()), 0.0};
  const double m = static_cast<double>(X.rows());
  for (int it = 0; it < iterations; ++it) {
    Vector gw = Vector::Zero(X.cols());
    double gb = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      double z = X.row(i).dot(model.w) + model.b;
      double p = 1.0 / (1.0 + std::exp(-z));
      double r = p - static_cast<double>(y[static_cast<std::size_t>(i)]);
      gw += r * X.row(i).transpose();
      gb += r;
    }
    model.w -= lr * (gw / m + ridge * model.w);
    model.b -= lr * gb / m;
  }
  return model;
}

}  // namespace detail

/// Proxy-A-distance: 2 (1 - 2 err) of a logistic domain classifier trained on
/// a stratified half of each sample and scored on the other half.
inline DivergenceEstimate proxy_domain_divergence(const Matrix& X, const Matrix& Y, std::uint64_t seed) {
  if (X.rows() < 4 || Y.rows() < 4) throw DataError("proxy_domain_divergence needs at least 4 rows per side");
  detail::require_same_width(X, Y);
  Rng rng(derive_seed(seed, "proxy_split"));

  auto halves = [&](Eigen::Index n) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t cut = idx.size() / 2;
    return std::pair{std::vector<Eigen::Index>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut)),
                     std::vector<Eigen::Index>(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end())};
  };
  auto [xa_train, xa_test] = halves(X.rows());
  auto [yb_train, yb_test] = halves(Y.rows());
  if (xa_train.empty() || xa_test.empty() || yb_train.empty() || yb_test.empty())
    throw DataError("proxy_domain_divergence: degenerate split");

  Matrix train = vstack(take_rows(X, xa_train), take_rows(Y, yb_train));
  Matrix test = vstack(take_rows(X, xa_test), take_rows(Y, yb_test));
  std::vector<int> train_y(xa_train.size(), 0), test_y(xa_test.size(), 0);
  train_y.resize(xa_train.size() + yb_train.size(), 1);
  test_y.resize(xa_test.size() + yb_test.size(), 1);

  // Standardize with training statistics.
  Vector mean = train.colwise().mean().transpose();
  Vector sd = ((train.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index c = 0; c < sd.size(); ++c)
    if (!(sd(c) > 1e-12)) sd(c) = 1.0;
  auto standardize = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m.row(i) = (m.row(i) - mean.transpose()).cwiseQuotient(sd.transpose());
  };
  standardize(train);
  standardize(test);

  auto model = detail::fit_logistic(train, train_y, 300, 0.5, 1e-3);
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    int pred = (test.row(i).dot(model.w) + model.b) > 0.0 ? 1 : 0;
    if (pred != test_y[static_cast<std::size_t>(i)]) ++wrong;
  }
  double err = static_cast<double>(wrong) / static_cast<double>(test.rows());
  double value = std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
  return {value, Estimator::proxy_domain_classifier, static_cast<std::size_t>(X.rows()),
          static_cast<std::size_t>(Y.rows()), 0.0};
}

/// Class-conditional MMD: class-frequency weighted mean of per-class biased
/// MMD^2 over classes present on both sides. Classes seen on one side only
/// are skipped and reported.
inline DivergenceEstimate cond_mmd(const Matrix& Xa, const Labels& ya, const Matrix& Xb, const Labels& yb,
                                   const KernelCfg& cfg) {
  if (static_cast<Eigen::Index>(ya.size()) != Xa.rows() || static_cast<Eigen::Index>(yb.size()) != Xb.rows())
    throw ShapeError("cond_mmd: label count does not match row count");
  detail::require_same_width(Xa, Xb);
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_class;
  for (std::size_t i = 0; i < ya.size(); ++i) by_class[ya[i]].first.push_back(i);
  for (std::size_t i = 0; i < yb.size(); ++i) by_class[yb[i]].second.push_back(i);

  std::vector<std::size_t> shared_a, shared_b;
  std::size_t skipped = 0, skipped_rows = 0;
  for (const auto& [c, rows] : by_class) {
    if (rows.first.empty() || rows.second.empty()) {
      ++skipped;
      skipped_rows += rows.first.size() + rows.second.size();
      continue;
    }
    shared_a.insert(shared_a.end(), rows.first.begin(), rows.first.end());
    shared_b.insert(shared_b.end(), rows.second.begin(), rows.second.end());
  }
  if (shared_a.empty()) throw DataError("cond_mmd: no class present on both sides");

  KernelCfg fixed = cfg;
  fixed.bandwidth = resolve_bandwidth(take_rows(Xa, shared_a), take_rows(Xb, shared_b), cfg);

  double total_weight = 0.0, value = 0.0;
  for (const auto& [c, rows] : by_class) {
    if (rows.first.empty() || rows.second.empty()) continue;
    double weight = static_cast<double>(rows.first.size() + rows.second.size());
    value += weight * mmd2_biased(take_rows(Xa, rows.first), take_rows(Xb, rows.second), fixed).value;
    total_weight += weight;
  }
  DivergenceEstimate est{value / total_weight, Estimator::cond_mmd, ya.size(), yb.size(), *fixed.bandwidth};
  est.skipped_classes = skipped;
  est.skipped_mass = static_cast<double>(skipped_rows) / static_cast<double>(ya.size() + yb.size());
  return est;
}

namespace detail {

inline void require_distribution(std::span<const double> p, const char* who) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DataError(std::string(who) + ": negative or non-finite mass");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DataError(std::string(who) + ": masses sum to " + std::to_string(s));
}

}  // namespace detail

/// sum_k |p_k - q_k|, i.e. twice the largest gap in probability over subsets.
inline double l1_divergence_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("l1_divergence_discrete: supports differ in size");
  detail::require_distribution(p, "l1_divergence_discrete");
  detail::require_distribution(q, "l1_divergence_discrete");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s;
}

/// Jensen-Shannon divergence in nats; bounded by ln 2.
inline double js_divergence_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence_discrete: supports differ in size");
  detail::require_distribution(p, "js_divergence_discrete");
  detail::require_distribution(q, "js_divergence_discrete");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) s += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) s += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(0.0, s);
}

}  // namespace l2e
