#pragma once

// Generalization bound for the newest target task of a dynamic stream.
//
//   eps_{N+1}^t(h) <= (1/2N) sum_j (eps_j^s(h) + eps_j^t(h))
//                     + (N+2)/2 * (d~ + lambda~)
//                     + R~ + (mu/N) sqrt(ln(1/delta) / (2 m~))
//
// d~ and lambda~ are maxima over the chain links: source j -> j+1, the cross
// link source 1 -> target 1, and target j -> j+1. On discrete instances all
// population quantities are exact, so the inequality without its sampling
// terms can be checked by brute force over a finite hypothesis set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "l2e/divergence.hpp"
#include "l2e/error.hpp"
#include "l2e/random.hpp"

namespace l2e {

using Hypothesis = std::vector<int>;  // symbol -> {0, 1}

struct DiscreteTask {
  std::vector<double> p;  // distribution over symbols
  std::vector<int> f;     // labeling function
};

struct DiscreteInstance {
  int K = 0;
  std::vector<DiscreteTask> sources;  // 1..N
  std::vector<DiscreteTask> targets;  // 1..N+1
  std::vector<Hypothesis> H;

  int N() const { return static_cast<int>(sources.size()); }

  void validate() const {
    if (K < 1) throw ConfigError("discrete instance needs K >= 1");
    if (sources.empty() || targets.size() != sources.size() + 1)
      throw ConfigError("discrete instance needs N sources and N+1 targets");
    if (H.empty()) throw ConfigError("hypothesis set is empty");
    auto check = [&](const DiscreteTask& t) {
      if (t.p.size() != static_cast<std::size_t>(K) || t.f.size() != static_cast<std::size_t>(K))
        throw ShapeError("task distribution or labeling has wrong support size");
      double s = 0.0;
      for (double v : t.p) {
        if (v < 0.0) throw DataError("negative probability mass");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-12) throw DataError("task distribution does not sum to 1");
      for (int y : t.f)
        if (y != 0 && y != 1) throw DataError("labeling values must be 0 or 1");
    };
    for (const auto& t : sources) check(t);
    for (const auto& t : targets) check(t);
    for (const auto& h : H) {
      if (h.size() != static_cast<std::size_t>(K)) throw ShapeError("hypothesis has wrong support size");
      for (int y : h)
        if (y != 0 && y != 1) throw DataError("hypothesis values must be 0 or 1");
    }
  }
};

/// Expected 0-1 loss of h against f under p.
inline double expected_error(const DiscreteTask& task, const Hypothesis& h) {
  double e = 0.0;
  for (std::size_t x = 0; x < task.p.size(); ++x)
    if (h[x] != task.f[x]) e += task.p[x];
  return e;
}

/// Errors on sources 1..N followed by targets 1..N+1.
inline std::vector<double> exact_errors(const DiscreteInstance& inst, const Hypothesis& h) {
  std::vector<double> out;
  for (const auto& t : inst.sources) out.push_back(expected_error(t, h));
  for (const auto& t : inst.targets) out.push_back(expected_error(t, h));
  return out;
}

enum class DivergenceKind { l1, f_js, c_div };

inline const char* divergence_kind_name(DivergenceKind k) {
  switch (k) {
    case DivergenceKind::l1: return "l1";
    case DivergenceKind::f_js: return "f_js";
    case DivergenceKind::c_div: return "c_div";
  }
  return "unknown";
}

// theorem: lambda* = min of the two expected labeling disagreements.
// corollary: lambda* = min over H of the combined error on both sides.
enum class LambdaVariant { theorem, corollary };

struct ChainDivergences {
  std::vector<double> source_chain;  // d(s_j, s_{j+1}), j = 1..N-1
  double cross = 0.0;                // d(s_1, t_1)
  std::vector<double> target_chain;  // d(t_j, t_{j+1}), j = 1..N
  std::vector<double> source_lambda;
  double cross_lambda = 0.0;
  std::vector<double> target_lambda;
  DivergenceKind kind = DivergenceKind::l1;

  double max_divergence() const {
    double m = cross;
    for (double v : source_chain) m = std::max(m, v);
    for (double v : target_chain) m = std::max(m, v);
    return m;
  }
  double max_lambda() const {
    double m = cross_lambda;
    for (double v : source_lambda) m = std::max(m, v);
    for (double v : target_lambda) m = std::max(m, v);
    return m;
  }
};

namespace detail {

inline std::vector<double> joint_distribution(const DiscreteTask& t) {
  std::vector<double> j(2 * t.p.size(), 0.0);
  for (std::size_t x = 0; x < t.p.size(); ++x) j[2 * x + static_cast<std::size_t>(t.f[x])] = t.p[x];
  return j;
}

inline double link_divergence(const DiscreteTask& a, const DiscreteTask& b, DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::l1: return l1_divergence_discrete(a.p, b.p);
    case DivergenceKind::f_js: return js_divergence_discrete(a.p, b.p);
    case DivergenceKind::c_div: return l1_divergence_discrete(joint_distribution(a), joint_distribution(b));
  }
  return 0.0;
}

inline double labeling_disagreement(const DiscreteTask& under, const DiscreteTask& a, const DiscreteTask& b) {
  double e = 0.0;
  for (std::size_t x = 0; x < under.p.size(); ++x)
    if (a.f[x] != b.f[x]) e += under.p[x];
  return e;
}

inline double link_lambda(const DiscreteTask& a, const DiscreteTask& b, LambdaVariant variant,
                          std::span<const Hypothesis> H) {
  if (variant == LambdaVariant::theorem)
    return std::min(labeling_disagreement(a, a, b), labeling_disagreement(b, a, b));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : H) best = std::min(best, expected_error(a, h) + expected_error(b, h));
  return best;
}

}  // namespace detail

inline ChainDivergences chain_divergences(const DiscreteInstance& inst, DivergenceKind kind,
                                          LambdaVariant variant = LambdaVariant::theorem) {
  inst.validate();
  ChainDivergences c;
  c.kind = kind;
  const int N = inst.N();
  const bool zero_lambda = kind == DivergenceKind::c_div;
  auto lambda = [&](const DiscreteTask& a, const DiscreteTask& b) {
    return zero_lambda ? 0.0 : detail::link_lambda(a, b, variant, inst.H);
  };
  for (int j = 0; j + 1 < N; ++j) {
    const auto& a = inst.sources[static_cast<std::size_t>(j)];
    const auto& b = inst.sources[static_cast<std::size_t>(j + 1)];
    c.source_chain.push_back(detail::link_divergence(a, b, kind));
    c.source_lambda.push_back(lambda(a, b));
  }
  c.cross = detail::link_divergence(inst.sources[0], inst.targets[0], kind);
  c.cross_lambda = lambda(inst.sources[0], inst.targets[0]);
  for (int j = 0; j < N; ++j) {
    const auto& a = inst.targets[static_cast<std::size_t>(j)];
    const auto& b = inst.targets[static_cast<std::size_t>(j + 1)];
    c.target_chain.push_back(detail::link_divergence(a, b, kind));
    c.target_lambda.push_back(lambda(a, b));
  }
  return c;
}

/// Monte Carlo estimate of the empirical Rademacher complexity of the 0-1
/// loss class {(x, y) -> [h(x) != y] : h in H} on the sample.
inline double rademacher_mc(std::span<const Hypothesis> H, std::span<const int> points, std::span<const int> labels,
                            int n_draws, std::uint64_t seed) {
  if (H.empty()) throw ConfigError("rademacher_mc: empty hypothesis set");
  if (points.empty() || points.size() != labels.size()) throw ConfigError("rademacher_mc: bad sample");
  if (n_draws < 1) throw ConfigError("rademacher_mc: n_draws must be >= 1");
  const std::size_t m = points.size();
  // Loss vectors of every hypothesis on the sample.
  std::vector<std::vector<double>> losses;
  for (const auto& h : H) {
    std::vector<double> l(m);
    for (std::size_t i = 0; i < m; ++i) l[i] = h.at(static_cast<std::size_t>(points[i])) != labels[i] ? 1.0 : 0.0;
    losses.push_back(std::move(l));
  }
  Rng rng(derive_seed(seed, "rademacher"));
  std::bernoulli_distribution coin(0.5);
  std::vector<double> sigma(m);
  double total = 0.0;
  for (int d = 0; d < n_draws; ++d) {
    for (auto& s : sigma) s = coin(rng) ? 1.0 : -1.0;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& l : losses) {
      double c = 0.0;
      for (std::size_t i = 0; i < m; ++i) c += sigma[i] * l[i];
      best = std::max(best, c);
    }
    total += 2.0 * best / static_cast<double>(m);
  }
  return total / n_draws;
}

enum class BoundVariant {
  theorem,       // L1 divergence, mu * d~ and mu * lambda~
  corollary_f,   // raw f-divergence (JS), lambda* = min_h combined error
  corollary_c,   // joint (C) divergence with mu factor, lambda~ = 0
  corollary_mmd, // plug-in MMD scaled by a constant L, lambda~ supplied
};

inline const char* bound_variant_name(BoundVariant v) {
  switch (v) {
    case BoundVariant::theorem: return "theorem";
    case BoundVariant::corollary_f: return "corollary_f";
    case BoundVariant::corollary_c: return "corollary_c";
    case BoundVariant::corollary_mmd: return "corollary_mmd";
  }
  return "unknown";
}

struct BoundInputs {
  // Empirical errors on sources 1..N and historical targets 1..N.
  std::vector<double> source_errors;
  std::vector<double> target_errors;
  double max_divergence = 0.0;
  double max_lambda = 0.0;
  double rademacher = 0.0;
  double mu = 1.0;
  double delta = 0.05;
  double m_tilde = 1.0;
  int N = 1;
  BoundVariant variant = BoundVariant::theorem;
  double mmd_constant = 1.0;  // L of the MMD variant
  std::string divergence_kind = "l1";
};

struct BoundReport {
  double mean_empirical_error = 0.0;
  double d_tilde = 0.0;
  double lambda_tilde = 0.0;
  double drift_term = 0.0;  // (N+2)/2 * (d~ + lambda~)
  double rademacher = 0.0;
  double concentration = 0.0;
  double mu = 1.0;
  double delta = 0.05;
  double m_tilde = 1.0;
  int N = 1;
  std::string divergence_kind;
  BoundVariant variant = BoundVariant::theorem;
  bool complexity_term_omitted = false;
  bool lambda_estimated = true;
  double total = 0.0;
};

inline BoundReport compute_bound(const BoundInputs& in) {
  if (!(in.delta > 0.0 && in.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(in.m_tilde >= 1.0)) throw ConfigError("m_tilde must be >= 1");
  if (in.N < 1) throw ConfigError("N must be >= 1");
  if (!(in.mu > 0.0)) throw ConfigError("mu must be > 0");
  if (in.source_errors.size() != static_cast<std::size_t>(in.N) || in.target_errors.size() != static_cast<std::size_t>(in.N))
    throw ShapeError("bound needs N source errors and N historical target errors");
  if (in.max_divergence < 0.0 || in.max_lambda < 0.0 || in.rademacher < 0.0)
    throw DataError("bound terms must be nonnegative");

  BoundReport r;
  r.mu = in.mu;
  r.delta = in.delta;
  r.m_tilde = in.m_tilde;
  r.N = in.N;
  r.variant = in.variant;
  r.divergence_kind = in.divergence_kind;

  double err = 0.0;
  for (double e : in.source_errors) err += e;
  for (double e : in.target_errors) err += e;
  r.mean_empirical_error = err / (2.0 * in.N);

  switch (in.variant) {
    case BoundVariant::theorem:
      r.d_tilde = in.mu * in.max_divergence;
      r.lambda_tilde = in.mu * in.max_lambda;
      break;
    case BoundVariant::corollary_f:
      r.d_tilde = in.max_divergence;
      r.lambda_tilde = in.max_lambda;
      break;
    case BoundVariant::corollary_c:
      r.d_tilde = in.mu * in.max_divergence;
      r.lambda_tilde = 0.0;
      break;
    case BoundVariant::corollary_mmd:
      r.d_tilde = in.mmd_constant * in.max_divergence;
      r.lambda_tilde = in.max_lambda;
      break;
  }
  r.drift_term = 0.5 * (in.N + 2) * (r.d_tilde + r.lambda_tilde);
  r.rademacher = in.rademacher;
  r.concentration = in.mu / in.N * std::sqrt(std::log(1.0 / in.delta) / (2.0 * in.m_tilde));
  r.total = r.mean_empirical_error + r.drift_term + r.rademacher + r.concentration;
  return r;
}

/// Assembles the bound from per-task errors and chain divergences.
inline BoundReport compute_bound(const std::vector<double>& source_errors, const std::vector<double>& target_errors,
                                 const ChainDivergences& chain, double rademacher, double mu, double delta,
                                 double m_tilde, BoundVariant variant = BoundVariant::theorem, double mmd_constant = 1.0) {
  BoundInputs in;
  in.source_errors = source_errors;
  in.target_errors = target_errors;
  in.max_divergence = chain.max_divergence();
  in.max_lambda = chain.max_lambda();
  in.rademacher = rademacher;
  in.mu = mu;
  in.delta = delta;
  in.m_tilde = m_tilde;
  in.N = static_cast<int>(source_errors.size());
  in.variant = variant;
  in.mmd_constant = mmd_constant;
  in.divergence_kind = divergence_kind_name(chain.kind);
  return compute_bound(in);
}

struct ChainCheck {
  std::vector<bool> holds;
  std::vector<double> slack;  // rhs - lhs per hypothesis
  std::vector<double> lhs;
  std::vector<double> rhs;
  double d_tilde = 0.0;
  double lambda_tilde = 0.0;

  bool all_hold() const { return std::all_of(holds.begin(), holds.end(), [](bool b) { return b; }); }
};

/// Population version of the bound for every h in H: 0-1 loss (mu = 1),
/// exact L1 divergences and labeling disagreements, no sampling terms.
inline ChainCheck verify_chain_inequality(const DiscreteInstance& inst) {
  auto chain = chain_divergences(inst, DivergenceKind::l1, LambdaVariant::theorem);
  const int N = inst.N();
  ChainCheck c;
  c.d_tilde = chain.max_divergence();
  c.lambda_tilde = chain.max_lambda();
  const double drift = 0.5 * (N + 2) * (c.d_tilde + c.lambda_tilde);
  for (const auto& h : inst.H) {
    auto e = exact_errors(inst, h);
    double avg = 0.0;
    for (int j = 0; j < N; ++j) avg += e[static_cast<std::size_t>(j)] + e[static_cast<std::size_t>(N + j)];
    avg /= 2.0 * N;
    const double lhs = e.back();
    const double rhs = avg + drift;
    c.lhs.push_back(lhs);
    c.rhs.push_back(rhs);
    c.slack.push_back(rhs - lhs);
    c.holds.push_back(lhs <= rhs + 1e-12);
  }
  return c;
}

/// Random instance: K in [2, max_K], N in [1, max_N], |H| in [1, max_H]
/// distinct hypotheses, Dirichlet(1) distributions, uniform labelings.
inline DiscreteInstance random_instance(std::uint64_t seed, int max_K = 6, int max_H = 32, int max_N = 4) {
  Rng rng(derive_seed(seed, "discrete_instance"));
  DiscreteInstance inst;
  inst.K = std::uniform_int_distribution<int>(2, max_K)(rng);
  const int N = std::uniform_int_distribution<int>(1, max_N)(rng);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  auto task = [&] {
    DiscreteTask t;
    double s = 0.0;
    for (int x = 0; x < inst.K; ++x) {
      t.p.push_back(expo(rng));
      s += t.p.back();
    }
    for (auto& v : t.p) v /= s;
    // Renormalize so the masses sum to 1 within round-off.
    double r = 0.0;
    for (std::size_t x = 0; x + 1 < t.p.size(); ++x) r += t.p[x];
    t.p.back() = std::max(0.0, 1.0 - r);
    for (int x = 0; x < inst.K; ++x) t.f.push_back(coin(rng) ? 1 : 0);
    return t;
  };
  for (int j = 0; j < N; ++j) inst.sources.push_back(task());
  for (int j = 0; j <= N; ++j) inst.targets.push_back(task());

  const int total = 1 << inst.K;
  const int hsize = std::uniform_int_distribution<int>(1, std::min(max_H, total))(rng);
  std::vector<int> codes(static_cast<std::size_t>(total));
  std::iota(codes.begin(), codes.end(), 0);
  std::shuffle(codes.begin(), codes.end(), rng);
  for (int i = 0; i < hsize; ++i) {
    Hypothesis h(static_cast<std::size_t>(inst.K));
    for (int x = 0; x < inst.K; ++x) h[static_cast<std::size_t>(x)] = (codes[static_cast<std::size_t>(i)] >> x) & 1;
    inst.H.push_back(std::move(h));
  }
  return inst;
}

struct SweepReport {
  int instances = 0;
  int instances_holding = 0;
  long long hypotheses = 0;
  long long failures = 0;
  double min_slack = std::numeric_limits<double>::infinity();
};

inline SweepReport oracle_sweep(int count, std::uint64_t seed, int max_K = 6, int max_H = 32, int max_N = 4) {
  SweepReport s;
  for (int i = 0; i < count; ++i) {
    auto inst = random_instance(derive_seed(seed, "sweep", i), max_K, max_H, max_N);
    auto c = verify_chain_inequality(inst);
    ++s.instances;
    if (c.all_hold()) ++s.instances_holding;
    for (std::size_t h = 0; h < c.holds.size(); ++h) {
      ++s.hypotheses;
      if (!c.holds[h]) ++s.failures;
      s.min_slack = std::min(s.min_slack, c.slack[h]);
    }
  }
  return s;
}

}  // namespace l2e
