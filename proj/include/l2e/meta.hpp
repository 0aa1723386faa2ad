#pragma once

// Meta-learning over pairs of consecutive tasks.
//
// Pair k of a stream with N source snapshots:
//   k = -j (1 <= j <= N-1): classify source j+1, match (source j, source j+1)
//   k =  0                : classify source 1,   match (source 1, target 1)
//   k =  j (1 <= j <= N)  : classify target j (pseudo-labels), match (target j, target j+1)
//
// Pairs with k <= N-1 train the shared initialization with first-order MAML;
// pair N adapts it to the newest target. Target pairs get their labels one
// time step at a time: target j is pseudo-labeled by the initialization
// trained on pairs k <= j-2, adapted on pair j-1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "l2e/divergence.hpp"
#include "l2e/error.hpp"
#include "l2e/numerics.hpp"
#include "l2e/random.hpp"
#include "l2e/taskstream.hpp"

namespace l2e {

struct L2ECfg {
  double gamma = 0.1;
  double p_percent = 80.0;
  double inner_lr = 0.1;
  int inner_steps = 1;
  double outer_lr = 0.02;
  int outer_epochs = 40;
  // 0 means full batch.
  int batch_size = 0;
  int val_count = 40;
  std::uint64_t seed = 0;
  KernelCfg kernel = KernelCfg::median();
  double pseudo_weight = 1.0;
  bool warm_start = true;
  std::vector<int> hidden_dims{16};
  int embed_dim = 8;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(p_percent > 0.0 && p_percent <= 100.0)) throw ConfigError("p_percent must lie in (0, 100]");
    if (!(inner_lr >= 0.0) || !(outer_lr >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1");
    if (outer_epochs < 0) throw ConfigError("outer_epochs must be >= 0");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    if (val_count < 1) throw ConfigError("val_count must be >= 1");
    if (!(pseudo_weight >= 0.0)) throw ConfigError("pseudo_weight must be >= 0");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    for (int h : hidden_dims)
      if (h < 1) throw ConfigError("hidden layer width must be >= 1");
    kernel.validate();
  }

  Arch arch_for(const DynamicStream& s) const {
    Arch a;
    a.input_dim = s.feature_dim;
    a.hidden_dims = hidden_dims;
    a.embed_dim = embed_dim;
    a.num_classes = s.num_classes;
    return a;
  }
};

using SnapshotPtr = std::shared_ptr<const TaskSnapshot>;

struct TrainedPair {
  int k = 0;
  bool pseudo = false;
};

struct PseudoLabelSet {
  int time_index = 0;
  Labels labels;
  Vector entropies;
  std::vector<bool> selected;
  double p_percent = 0.0;
  // Provenance: pairs the initialization was trained on, and the adaptation pair.
  std::vector<TrainedPair> trained_on;
  int adapted_on = 0;

  std::size_t selected_count() const { return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true)); }
};

struct MetaPair {
  int k = 0;
  std::string name;
  SnapshotPtr cls;
  // > 0: classification labels are the pseudo-labels of this target snapshot.
  int pseudo_target = 0;
  SnapshotPtr div_a;
  SnapshotPtr div_b;
  SplitIndices split;
  double bandwidth = 1.0;
  // Consecutive-chain pair (as opposed to an extra pair of the all-pairs variant).
  bool chain = true;
  std::optional<PseudoLabelSet> pseudo;

  bool is_pseudo() const { return pseudo_target > 0; }
  bool resolved() const { return !is_pseudo() || pseudo.has_value(); }
};

enum class Split { train, val, all };

namespace detail {

inline SnapshotPtr stripped(const TaskSnapshot& s) {
  auto p = std::make_shared<TaskSnapshot>(s);
  p->eval_labels.reset();
  return p;
}

inline std::string snap_tag(const TaskSnapshot& s) {
  return std::string(s.role == Role::source ? "s" : "t") + std::to_string(s.time_index);
}

}  // namespace detail

/// One pair with its seeded train/val split and frozen kernel bandwidth.
inline MetaPair make_meta_pair(int k, SnapshotPtr cls, int pseudo_target, SnapshotPtr div_a, SnapshotPtr div_b,
                               const L2ECfg& cfg, bool chain = true) {
  MetaPair p;
  p.k = k;
  p.cls = std::move(cls);
  p.pseudo_target = pseudo_target;
  p.div_a = std::move(div_a);
  p.div_b = std::move(div_b);
  p.chain = chain;
  p.name = "k=" + std::to_string(k) + " cls=" + detail::snap_tag(*p.cls) + " div=(" + detail::snap_tag(*p.div_a) + "," +
           detail::snap_tag(*p.div_b) + ")";
  if (static_cast<std::size_t>(cfg.val_count) >= p.cls->rows())
    throw ConfigError("val_count " + std::to_string(cfg.val_count) + " must be smaller than snapshot size " +
                      std::to_string(p.cls->rows()) + " (pair " + p.name + ")");
  p.split = split_indices(p.cls->rows(), static_cast<std::size_t>(cfg.val_count),
                          derive_seed(cfg.seed, "pair_split:" + p.name));
  p.bandwidth = resolve_bandwidth(p.div_a->features, p.div_b->features, cfg.kernel);
  return p;
}

/// The 2N consecutive pairs k = 1-N .. N in ascending order.
inline std::vector<MetaPair> build_meta_pairs(const DynamicStream& stream, const L2ECfg& cfg) {
  stream.validate();
  cfg.validate();
  const int N = stream.N();
  std::vector<SnapshotPtr> src, tgt;
  for (const auto& s : stream.sources) src.push_back(detail::stripped(s));
  for (const auto& t : stream.targets) tgt.push_back(detail::stripped(t));
  auto S = [&](int j) { return src[static_cast<std::size_t>(j - 1)]; };
  auto T = [&](int j) { return tgt[static_cast<std::size_t>(j - 1)]; };

  std::vector<MetaPair> pairs;
  for (int j = N - 1; j >= 1; --j) pairs.push_back(make_meta_pair(-j, S(j + 1), 0, S(j), S(j + 1), cfg));
  pairs.push_back(make_meta_pair(0, S(1), 0, S(1), T(1), cfg));
  for (int j = 1; j <= N; ++j) pairs.push_back(make_meta_pair(j, T(j), j, T(j), T(j + 1), cfg));
  return pairs;
}

inline const MetaPair* find_chain_pair(std::span<const MetaPair> pairs, int k) {
  for (const auto& p : pairs)
    if (p.chain && p.k == k) return &p;
  return nullptr;
}

namespace detail {

inline std::vector<std::size_t> split_rows(const MetaPair& pair, Split split) {
  switch (split) {
    case Split::train: return pair.split.train;
    case Split::val: return pair.split.val;
    case Split::all: break;
  }
  std::vector<std::size_t> all(pair.cls->rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

inline Batch cls_batch(const MetaPair& pair, std::vector<std::size_t> rows, const L2ECfg& cfg) {
  Batch b;
  if (pair.is_pseudo()) {
    if (!pair.pseudo) throw StateError("pair " + pair.name + " has no pseudo-labels yet");
    const auto& pl = *pair.pseudo;
    std::erase_if(rows, [&](std::size_t r) { return !pl.selected[r]; });
    b.labels = take(pl.labels, rows);
    if (cfg.pseudo_weight != 1.0) b.weights = Vector::Constant(static_cast<Eigen::Index>(rows.size()), cfg.pseudo_weight);
  } else {
    if (!pair.cls->labels) throw StateError("pair " + pair.name + " classification data has no labels");
    b.labels = take(*pair.cls->labels, rows);
  }
  b.features = take_rows(pair.cls->features, rows);
  return b;
}

inline GradVector zeta_on_rows(const ModelParams& params, const MetaPair& pair, std::vector<std::size_t> rows,
                               const L2ECfg& cfg, LossTerms* terms = nullptr) {
  Batch batch = cls_batch(pair, std::move(rows), cfg);
  KernelCfg kernel = KernelCfg::fixed(pair.bandwidth, cfg.kernel.multipliers);
  return loss_and_grad(params, batch, DivPair{pair.div_a->features, pair.div_b->features}, cfg.gamma, kernel, terms);
}

}  // namespace detail

/// Loss of pair k on the chosen split (classification rows restricted to the
/// selected pseudo-labels when the pair is pseudo-labeled) and its gradient.
inline GradVector zeta(const ModelParams& params, const MetaPair& pair, Split split, const L2ECfg& cfg,
                       LossTerms* terms = nullptr) {
  return detail::zeta_on_rows(params, pair, detail::split_rows(pair, split), cfg, terms);
}

/// cfg.inner_steps gradient steps of size cfg.inner_lr on the pair's loss.
/// With cfg.batch_size > 0 each step sees a seeded minibatch of the split.
inline ModelParams inner_adapt(const ModelParams& params, const MetaPair& pair, const L2ECfg& cfg,
                               Split split = Split::train, std::uint64_t batch_key = 0) {
  if (cfg.inner_lr == 0.0) return params;
  ModelParams theta = params;
  const auto rows = detail::split_rows(pair, split);
  for (int s = 0; s < cfg.inner_steps; ++s) {
    std::vector<std::size_t> use = rows;
    if (cfg.batch_size > 0 && rows.size() > static_cast<std::size_t>(cfg.batch_size)) {
      Rng rng(derive_seed(cfg.seed, "minibatch:" + pair.name, static_cast<std::int64_t>(batch_key * 1000003u + static_cast<std::uint64_t>(s))));
      std::shuffle(use.begin(), use.end(), rng);
      use.resize(static_cast<std::size_t>(cfg.batch_size));
      std::sort(use.begin(), use.end());
    }
    theta = sgd_step(theta, detail::zeta_on_rows(theta, pair, std::move(use), cfg), cfg.inner_lr);
  }
  return theta;
}

/// First-order MAML on every pair with k <= upto_k, ascending k. Each epoch
/// sums the validation gradients taken at the adapted parameters and applies
/// one outer step.
inline ModelParams meta_train(std::span<const MetaPair> pairs, int upto_k, const ModelParams& init, const L2ECfg& cfg,
                              std::vector<TrainedPair>* trained_on = nullptr) {
  std::vector<const MetaPair*> active;
  for (const auto& p : pairs)
    if (p.k <= upto_k) {
      if (!p.resolved()) throw StateError("meta_train: pair " + p.name + " is not resolved");
      active.push_back(&p);
    }
  std::stable_sort(active.begin(), active.end(), [](const MetaPair* a, const MetaPair* b) { return a->k < b->k; });
  if (trained_on)
    for (const auto* p : active) trained_on->push_back({p->k, p->is_pseudo()});

  ModelParams theta = init;
  if (active.empty()) return theta;
  for (int epoch = 0; epoch < cfg.outer_epochs; ++epoch) {
    GradVector total = GradVector::zeros_like(theta);
    for (const auto* p : active) {
      ModelParams adapted = inner_adapt(theta, *p, cfg, Split::train, static_cast<std::uint64_t>(epoch));
      total += zeta(adapted, *p, Split::val, cfg);
    }
    theta = sgd_step(theta, total, cfg.outer_lr);
  }
  return theta;
}

/// Labels target j with the initialization adapted on pair j-1 and keeps the
/// ceil(p% * m) lowest-entropy rows (ties: lower row index first). Every pair
/// classifying target j is resolved in place.
inline PseudoLabelSet pseudo_label(const DynamicStream& stream, std::vector<MetaPair>& pairs, int j,
                                   const ModelParams& theta_prev, const L2ECfg& cfg,
                                   const std::vector<TrainedPair>& trained_on = {}) {
  for (const auto& t : trained_on) {
    bool ok = t.k <= j - 2 || (!t.pseudo && t.k <= j - 1);
    if (!ok)
      throw StateError("pseudo_label(" + std::to_string(j) + "): initialization was trained on pair k=" +
                       std::to_string(t.k));
  }
  const MetaPair* bridge = find_chain_pair(pairs, j - 1);
  if (!bridge) throw StateError("pseudo_label(" + std::to_string(j) + "): no pair k=" + std::to_string(j - 1));
  if (!bridge->resolved()) throw StateError("pseudo_label(" + std::to_string(j) + "): pair " + bridge->name + " is not resolved");

  ModelParams adapted = inner_adapt(theta_prev, *bridge, cfg);
  const Matrix& X = stream.target(j).features;
  Matrix probs = forward(adapted, X).probs;

  PseudoLabelSet set;
  set.time_index = j;
  set.p_percent = cfg.p_percent;
  set.trained_on = trained_on;
  set.adapted_on = bridge->k;
  set.entropies = predict_entropy(probs);
  set.labels.resize(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    set.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  const std::size_t m = static_cast<std::size_t>(probs.rows());
  const auto count = static_cast<std::size_t>(std::ceil(cfg.p_percent * static_cast<double>(m) / 100.0 - 1e-9));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return set.entropies(static_cast<Eigen::Index>(a)) < set.entropies(static_cast<Eigen::Index>(b)); });
  set.selected.assign(m, false);
  for (std::size_t i = 0; i < std::min(count, m); ++i) set.selected[order[i]] = true;

  for (auto& p : pairs)
    if (p.pseudo_target == j) p.pseudo = set;
  return set;
}

/// Adapts the trained initialization with the full data of pair N.
inline ModelParams meta_test(const ModelParams& theta_star, const MetaPair& pair_n, const L2ECfg& cfg) {
  if (!pair_n.resolved()) throw StateError("meta_test: pair " + pair_n.name + " is not resolved");
  return inner_adapt(theta_star, pair_n, cfg, Split::all);
}

/// Accuracy against eval labels (targets) or labels (sources).
inline double evaluate(const ModelParams& params, const TaskSnapshot& snapshot) {
  const auto& truth = snapshot.eval_labels ? snapshot.eval_labels : snapshot.labels;
  if (!truth) throw DataError("evaluate: snapshot has no labels");
  if (truth->empty()) throw DataError("evaluate: snapshot is empty");
  Labels pred = predict(params, snapshot.features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == (*truth)[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct HistoricalScores {
  double h_acc = 0.0;
  std::vector<double> adapted;
  std::vector<double> unadapted;
};

/// Mean accuracy over targets 1..N, each scored after adapting theta_init on
/// pair j-1 (pair 0 for j = 1). Pipelines without that pair fall back to the
/// newest-target pair.
inline HistoricalScores evaluate_historical(const ModelParams& theta_init, const DynamicStream& stream,
                                            std::span<const MetaPair> pairs, const L2ECfg& cfg) {
  HistoricalScores out;
  const int N = stream.N();
  const MetaPair* newest = find_chain_pair(pairs, N);
  for (int j = 1; j <= N; ++j) {
    const MetaPair* p = find_chain_pair(pairs, j >= 2 ? j - 1 : 0);
    if (!p || !p->resolved()) p = newest;
    if (!p) throw StateError("evaluate_historical: no adaptation pair for target " + std::to_string(j));
    ModelParams adapted = inner_adapt(theta_init, *p, cfg);
    out.adapted.push_back(evaluate(adapted, stream.target(j)));
    out.unadapted.push_back(evaluate(theta_init, stream.target(j)));
  }
  out.h_acc = std::accumulate(out.adapted.begin(), out.adapted.end(), 0.0) / static_cast<double>(N);
  return out;
}

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  ModelParams theta_init;   // trained initialization
  ModelParams theta_final;  // adapted to the newest target
  double acc_newest = 0.0;
  double h_acc = 0.0;
  std::vector<double> historical_acc;
  std::vector<double> historical_acc_unadapted;
  // Accuracy of the selected pseudo-labels of target j (index j-1); NaN when
  // the pipeline never labels that target. Diagnostics only.
  std::vector<double> pseudo_label_acc;
  std::vector<std::string> pairs;
  double wall_seconds = 0.0;
};

/// Number of loss_and_grad evaluations one L2E run performs.
inline long long l2e_gradient_budget(int N, const L2ECfg& cfg) {
  long long pair_epochs = 0;
  for (int j = 1; j <= N; ++j) pair_epochs += N + j - 2;
  pair_epochs += 2LL * N - 1;
  return pair_epochs * cfg.outer_epochs * (cfg.inner_steps + 1) + static_cast<long long>(cfg.inner_steps) * (N + 1);
}

/// Runs the staged pipeline on an arbitrary pair set: pseudo-label every
/// target that some pair classifies, train on all pairs k <= N-1, adapt with
/// chain pair N, then score.
inline RunResult run_pipeline(const DynamicStream& stream, std::vector<MetaPair> pairs, const L2ECfg& cfg,
                              std::string method) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  stream.validate();
  const DynamicStream view = stream.training_view();
  const int N = stream.N();

  const ModelParams init = init_params(cfg.arch_for(stream), derive_seed(cfg.seed, "model"));
  ModelParams theta = init;
  RunResult r;
  r.method = std::move(method);
  r.seed = cfg.seed;
  r.pseudo_label_acc.assign(static_cast<std::size_t>(N), std::numeric_limits<double>::quiet_NaN());
  for (const auto& p : pairs) r.pairs.push_back(p.name);

  for (int j = 1; j <= N; ++j) {
    bool needed = std::any_of(pairs.begin(), pairs.end(), [&](const MetaPair& p) { return p.pseudo_target == j; });
    if (!needed) continue;
    try {
      std::vector<const MetaPair*> stage;
      for (const auto& p : pairs)
        if (p.k <= j - 2) stage.push_back(&p);
      // Pipelines without a source chain fall back to the labeled pairs up to j-1.
      int upto = j - 2;
      std::vector<MetaPair> fallback;
      if (stage.empty()) {
        for (const auto& p : pairs)
          if (p.k <= j - 1 && !p.is_pseudo()) fallback.push_back(p);
        upto = j - 1;
      }
      std::vector<TrainedPair> trained;
      const ModelParams& start = cfg.warm_start ? theta : init;
      theta = fallback.empty() && !stage.empty() ? meta_train(pairs, upto, start, cfg, &trained)
                                                 : meta_train(fallback, upto, start, cfg, &trained);
      auto set = pseudo_label(view, pairs, j, theta, cfg, trained);

      const auto& truth = *stream.target(j).eval_labels;
      std::size_t hit = 0, n = 0;
      for (std::size_t i = 0; i < set.labels.size(); ++i)
        if (set.selected[i]) {
          ++n;
          hit += set.labels[i] == truth[i];
        }
      if (n) r.pseudo_label_acc[static_cast<std::size_t>(j - 1)] = static_cast<double>(hit) / static_cast<double>(n);
    } catch (const Error& e) {
      throw StateError("pseudo-labeling stage j=" + std::to_string(j) + ": " + e.what());
    }
  }

  try {
    r.theta_init = meta_train(pairs, N - 1, cfg.warm_start ? theta : init, cfg);
  } catch (const Error& e) {
    throw StateError("meta-training stage k<=" + std::to_string(N - 1) + ": " + e.what());
  }
  const MetaPair* test_pair = find_chain_pair(pairs, N);
  if (!test_pair) throw StateError("meta-testing stage: no pair k=" + std::to_string(N));
  try {
    r.theta_final = meta_test(r.theta_init, *test_pair, cfg);
  } catch (const Error& e) {
    throw StateError("meta-testing stage pair " + test_pair->name + ": " + e.what());
  }

  r.acc_newest = evaluate(r.theta_final, stream.target(N + 1));
  auto hist = evaluate_historical(r.theta_init, stream, pairs, cfg);
  r.h_acc = hist.h_acc;
  r.historical_acc = std::move(hist.adapted);
  r.historical_acc_unadapted = std::move(hist.unadapted);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline RunResult run_l2e(const DynamicStream& stream, const L2ECfg& cfg) {
  return run_pipeline(stream, build_meta_pairs(stream, cfg), cfg, "l2e");
}

}  // namespace l2e
