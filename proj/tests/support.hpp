#pragma once

// Shared fixtures for the test suite: seeded random data and a central
// finite-difference oracle.

#include <cmath>
#include <functional>
#include <random>

#include "l2e/l2e.hpp"

namespace l2e::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Labels random_labels(std::size_t n, int classes, Rng& rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  Labels y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Central differences of f at x, step h.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  Vector y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y(i) = x(i) + h;
    const double up = f(y);
    y(i) = x(i) - h;
    const double down = f(y);
    y(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

/// Relative error below rel_tol, or absolute error below abs_tol near zero.
inline bool gradients_match(const Vector& analytic, const Vector& numeric, double rel_tol, double abs_tol,
                            double* worst = nullptr) {
  bool ok = true;
  double w = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic(i), n = numeric(i);
    const double diff = std::abs(a - n);
    const double rel = diff / std::max(std::abs(a), std::abs(n));
    if (diff > abs_tol && rel > rel_tol) {
      ok = false;
      w = std::max(w, rel);
    }
  }
  if (worst) *worst = w;
  return ok;
}

/// Tiny two-moons stream used by the pipeline tests.
inline StreamCfg small_stream(int N = 3, int m = 40, std::uint64_t seed = 0) {
  StreamCfg c;
  c.N = N;
  c.m = m;
  c.seed = seed;
  c.source_rotation = -8.0;
  c.target_rotation = 8.0;
  return c;
}

inline L2ECfg small_l2e(std::uint64_t seed = 0) {
  L2ECfg c;
  c.seed = seed;
  c.val_count = 10;
  c.outer_epochs = 3;
  c.hidden_dims = {6};
  c.embed_dim = 4;
  return c;
}

}  // namespace l2e::testing
