#pragma once

// Comparison pipelines: source-only training, static adaptation from the
// merged source to the newest target, and four variants of the meta-pair
// construction. All of them share the L2E hyper-parameters; the variants
// differ only in which pairs they build.

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "l2e/meta.hpp"

namespace l2e {

enum class BaselineKind {
  source_only,
  merged_source_da,
  l2e_no_source_evolution,
  l2e_merged_source,
  l2e_no_historical_target,
  l2e_all_pairs,
};

inline constexpr BaselineKind kAllBaselines[] = {
    BaselineKind::source_only,           BaselineKind::merged_source_da,
    BaselineKind::l2e_no_source_evolution, BaselineKind::l2e_merged_source,
    BaselineKind::l2e_no_historical_target, BaselineKind::l2e_all_pairs,
};

inline const char* baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::source_only: return "source_only";
    case BaselineKind::merged_source_da: return "merged_source_da";
    case BaselineKind::l2e_no_source_evolution: return "l2e_no_source_evolution";
    case BaselineKind::l2e_merged_source: return "l2e_merged_source";
    case BaselineKind::l2e_no_historical_target: return "l2e_no_historical_target";
    case BaselineKind::l2e_all_pairs: return "l2e_all_pairs";
  }
  return "unknown";
}

inline BaselineKind parse_baseline(std::string_view name) {
  for (auto k : kAllBaselines)
    if (name == baseline_name(k)) return k;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

struct BaselineSpec {
  BaselineKind kind = BaselineKind::source_only;
  L2ECfg cfg;
};

/// Pair count of the all-pairs variant: every unordered pair within the
/// historical sources, the cross pair, every unordered pair within the
/// historical targets, and the newest-target pair.
inline int all_pairs_count(int N) { return N * (N - 1) + 2; }

/// Pair set of an L2E variant. source_only and merged_source_da build none.
inline std::vector<MetaPair> build_variant_pairs(BaselineKind kind, const DynamicStream& stream, const L2ECfg& cfg) {
  const int N = stream.N();
  std::vector<MetaPair> pairs;
  switch (kind) {
    case BaselineKind::source_only:
    case BaselineKind::merged_source_da:
      return pairs;

    case BaselineKind::l2e_no_source_evolution:
      for (auto& p : build_meta_pairs(stream, cfg))
        if (p.k >= 0) pairs.push_back(std::move(p));
      return pairs;

    case BaselineKind::l2e_merged_source: {
      stream.validate();
      auto merged = std::make_shared<TaskSnapshot>(concat(stream.sources, 1, Role::source));
      std::vector<SnapshotPtr> tgt;
      for (const auto& t : stream.targets) tgt.push_back(detail::stripped(t));
      pairs.push_back(make_meta_pair(0, merged, 0, merged, tgt[0], cfg));
      for (int j = 1; j <= N; ++j)
        pairs.push_back(make_meta_pair(j, tgt[static_cast<std::size_t>(j - 1)], j, tgt[static_cast<std::size_t>(j - 1)],
                                       tgt[static_cast<std::size_t>(j)], cfg));
      return pairs;
    }

    case BaselineKind::l2e_no_historical_target: {
      for (auto& p : build_meta_pairs(stream, cfg))
        if (p.k < 0) pairs.push_back(std::move(p));
      auto newest_source = detail::stripped(stream.source(N));
      auto newest_target = detail::stripped(stream.target(N + 1));
      pairs.push_back(make_meta_pair(N, newest_source, 0, newest_source, newest_target, cfg));
      return pairs;
    }

    case BaselineKind::l2e_all_pairs: {
      pairs = build_meta_pairs(stream, cfg);
      std::vector<SnapshotPtr> src, tgt;
      for (const auto& s : stream.sources) src.push_back(detail::stripped(s));
      for (const auto& t : stream.targets) tgt.push_back(detail::stripped(t));
      // Non-adjacent pairs; the newer snapshot supplies classification data.
      // Keys place a pair in the first stage where its labels exist.
      for (int b = 3; b <= N; ++b)
        for (int a = 1; a <= b - 2; ++a)
          pairs.push_back(make_meta_pair(1 - b, src[static_cast<std::size_t>(b - 1)], 0, src[static_cast<std::size_t>(a - 1)],
                                         src[static_cast<std::size_t>(b - 1)], cfg, false));
      for (int b = 3; b <= N; ++b)
        for (int a = 1; a <= b - 2; ++a)
          pairs.push_back(make_meta_pair(b - 1, tgt[static_cast<std::size_t>(b - 1)], b, tgt[static_cast<std::size_t>(a - 1)],
                                         tgt[static_cast<std::size_t>(b - 1)], cfg, false));
      return pairs;
    }
  }
  return pairs;
}

namespace detail {

// Plain gradient descent for a fixed number of full-batch steps.
inline ModelParams train_static(const ModelParams& init, const Batch& cls, const std::optional<DivPair>& div,
                                const KernelCfg& kernel, double gamma, double lr, long long steps) {
  ModelParams theta = init;
  for (long long s = 0; s < steps; ++s) theta = sgd_step(theta, loss_and_grad(theta, cls, div, gamma, kernel), lr);
  return theta;
}

inline RunResult finish_static(std::string method, const DynamicStream& stream, const L2ECfg& cfg, ModelParams theta,
                               std::chrono::steady_clock::time_point t0) {
  RunResult r;
  r.method = std::move(method);
  r.seed = cfg.seed;
  const int N = stream.N();
  r.acc_newest = evaluate(theta, stream.target(N + 1));
  for (int j = 1; j <= N; ++j) r.historical_acc.push_back(evaluate(theta, stream.target(j)));
  r.historical_acc_unadapted = r.historical_acc;
  r.h_acc = std::accumulate(r.historical_acc.begin(), r.historical_acc.end(), 0.0) / static_cast<double>(N);
  r.pseudo_label_acc.assign(static_cast<std::size_t>(N), std::numeric_limits<double>::quiet_NaN());
  r.theta_init = theta;
  r.theta_final = std::move(theta);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

/// Runs one comparison pipeline with the same stream, seed, initialization
/// and gradient-evaluation budget as the L2E run it is compared with.
inline RunResult run_baseline(const BaselineSpec& spec, const DynamicStream& stream) {
  const auto t0 = std::chrono::steady_clock::now();
  const L2ECfg& cfg = spec.cfg;
  cfg.validate();
  stream.validate();
  const std::string name = baseline_name(spec.kind);

  switch (spec.kind) {
    case BaselineKind::source_only:
    case BaselineKind::merged_source_da: {
      const ModelParams init = init_params(cfg.arch_for(stream), derive_seed(cfg.seed, "model"));
      const TaskSnapshot merged = concat(stream.sources, 1, Role::source);
      Batch batch{merged.features, merged.labels, std::nullopt};
      const long long steps = l2e_gradient_budget(stream.N(), cfg);
      if (spec.kind == BaselineKind::source_only) {
        return detail::finish_static(name, stream, cfg,
                                     detail::train_static(init, batch, std::nullopt, cfg.kernel, 0.0, cfg.inner_lr, steps), t0);
      }
      // Only target features enter; the divergence side of the merged source
      // is a seeded subsample the size of the target snapshot.
      const TaskSnapshot& newest = stream.target(stream.N() + 1);
      std::vector<std::size_t> rows(merged.rows());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, "merged_source_da"));
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(std::min(rows.size(), newest.rows()));
      std::sort(rows.begin(), rows.end());
      const Matrix source_side = take_rows(merged.features, rows);
      const KernelCfg kernel = KernelCfg::fixed(resolve_bandwidth(source_side, newest.features, cfg.kernel), cfg.kernel.multipliers);
      return detail::finish_static(
          name, stream, cfg,
          detail::train_static(init, batch, DivPair{source_side, newest.features}, kernel, cfg.gamma, cfg.inner_lr, steps), t0);
    }
    default: {
      auto r = run_pipeline(stream, build_variant_pairs(spec.kind, stream, cfg), cfg, name);
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  }
}

}  // namespace l2e
