#pragma once

// Subcommands behind the command line tool. Each writes its files into the
// output directory and returns a process exit code.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "l2e/io.hpp"

namespace l2e {

struct CommandOptions {
  std::string config_path;
  std::string out_dir;                       // overrides config.output_dir
  std::optional<std::uint64_t> seed_override;  // replaces the seed list
  std::vector<std::string> methods;          // replaces the method list
};

inline ExperimentConfig resolve_config(const CommandOptions& opt) {
  ExperimentConfig cfg = load_config(opt.config_path);
  if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
  if (opt.seed_override) cfg.seeds = {*opt.seed_override};
  if (!opt.methods.empty()) {
    for (const auto& m : opt.methods)
      if (m != "l2e") parse_baseline(m);
    cfg.methods = opt.methods;
  }
  return cfg;
}

// ---- generate ----

inline Json stream_manifest(const ExperimentConfig& cfg, const DynamicStream& stream, std::uint64_t seed) {
  const StreamCfg& s = cfg.stream;
  const char* gen = s.generator == Generator::two_moons ? "two_moons"
                    : s.generator == Generator::gaussian_mixture ? "gaussian_mixture"
                                                                   : "csv";
  Json sources = Json::array(), targets = Json::array();
  for (int j = 1; j <= stream.N(); ++j) sources.push_back("source_" + std::to_string(j) + ".csv");
  for (int j = 1; j <= stream.N() + 1; ++j) targets.push_back("target_" + std::to_string(j) + ".csv");
  return Json{{"N", stream.N()},
              {"C", stream.num_classes},
              {"d", stream.feature_dim},
              {"m", s.m},
              {"seed", seed},
              {"generator", gen},
              {"source_rotation", s.source_rotation * s.drift_scale},
              {"target_rotation", s.target_rotation * s.drift_scale},
              {"source_noise", {{"offset", s.source_noise.offset}, {"slope", s.source_noise.slope}}},
              {"target_noise", {{"offset", s.target_noise.offset * s.noise_unit}, {"slope", s.target_noise.slope * s.noise_unit}}},
              {"config_hash", config_hash(cfg)},
              {"sources", sources},
              {"targets", targets}};
}

/// Writes {role}_{j}.csv for every snapshot plus stream.json. Target files
/// carry the held-out evaluation labels.
inline int cmd_generate(const ExperimentConfig& cfg) {
  const std::filesystem::path out = cfg.output_dir;
  ensure_dir(out);
  const std::uint64_t seed = cfg.seeds.front();
  const DynamicStream stream = gen_stream(stream_for_seed(cfg, seed));
  for (const auto& s : stream.sources) save_csv(s, (out / ("source_" + std::to_string(s.time_index) + ".csv")).string());
  for (const auto& t : stream.targets) save_csv(t, (out / ("target_" + std::to_string(t.time_index) + ".csv")).string());
  write_text(out / "stream.json", stream_manifest(cfg, stream, seed).dump(2) + "\n");
  return 0;
}

// ---- run ----

inline RunResult run_method(const std::string& method, const DynamicStream& stream, const L2ECfg& cfg) {
  if (method == "l2e") return run_l2e(stream, cfg);
  return run_baseline(BaselineSpec{parse_baseline(method), cfg}, stream);
}

struct RunRow {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  double acc = 0.0;
  double h_acc = 0.0;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; zero for a single value.
inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// summary.csv: one row per successful run, then one mean±std row per method.
inline std::string summary_csv(const std::vector<std::string>& methods, const std::vector<RunRow>& rows) {
  std::ostringstream os;
  os << "method,seed,acc,h_acc\n";
  for (const auto& r : rows)
    if (r.ok) os << r.method << "," << r.seed << "," << format_double(r.acc) << "," << format_double(r.h_acc) << "\n";
  for (const auto& m : methods) {
    std::vector<double> acc, h;
    for (const auto& r : rows)
      if (r.ok && r.method == m) {
        acc.push_back(r.acc);
        h.push_back(r.h_acc);
      }
    if (acc.empty()) continue;
    os << m << ",mean±std," << format_double(detail::mean_of(acc)) << "±" << format_double(detail::std_of(acc)) << ","
       << format_double(detail::mean_of(h)) << "±" << format_double(detail::std_of(h)) << "\n";
  }
  return os.str();
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out, const std::string& method,
                                             std::uint64_t seed, const char* tag) {
  return out / "checkpoints" / (method + "_seed" + std::to_string(seed) + "_" + tag + ".json");
}

/// Runs every listed method for every seed. A failing run is recorded with
/// its error and the remaining runs continue; the exit code is 1 if any
/// run failed. Wall times go to stderr only, so the files are reproducible.
inline int cmd_run(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const std::filesystem::path out = cfg.output_dir;
  ensure_dir(out / "checkpoints");
  const std::string hash = config_hash(cfg);
  Json runs = Json::array();
  std::vector<RunRow> rows;
  bool failed = false;

  for (const auto& method : cfg.methods) {
    for (std::uint64_t seed : cfg.seeds) {
      RunRow row{method, seed};
      Json entry;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const DynamicStream stream = gen_stream(stream_for_seed(cfg, seed));
        const RunResult r = run_method(method, stream, l2e_for_seed(cfg, seed));
        CheckpointMeta meta{hash, seed, method, "theta_init"};
        save_checkpoint(checkpoint_path(out, method, seed, "theta_init"), r.theta_init, meta);
        meta.tag = "theta_final";
        save_checkpoint(checkpoint_path(out, method, seed, "theta_final"), r.theta_final, meta);
        entry = run_result_to_json(r);
        row.ok = true;
        row.acc = r.acc_newest;
        row.h_acc = r.h_acc;
      } catch (const std::exception& e) {
        failed = true;
        entry = Json{{"method", method}, {"seed", seed}, {"status", "failed"}, {"error", e.what()}};
        log << "run " << method << " seed " << seed << " failed: " << e.what() << "\n";
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << method << " seed " << seed << ": " << (row.ok ? "ok" : "failed") << " in " << secs << " s\n";
      runs.push_back(std::move(entry));
      rows.push_back(row);
    }
  }

  const Json results{{"config_hash", hash}, {"runs", runs}};
  write_text(out / "results.json", results.dump(2) + "\n");
  write_text(out / "summary.csv", summary_csv(cfg.methods, rows));
  return failed ? 1 : 0;
}

// ---- divergence ----

struct DivergenceRow {
  int j = 0;
  std::optional<double> source_chain;  // d(s_j, s_{j+1})
  double source_target = 0.0;          // d(s_j, t_j)
  std::optional<double> target_chain;  // d(t_j, t_{j+1})
};

/// Biased MMD^2 along the stream, all entries at one bandwidth so that rows
/// are comparable. The bandwidth is the median heuristic on the pooled
/// snapshots. With params, features are first mapped to the embedding.
inline std::vector<DivergenceRow> divergence_evolution(const DynamicStream& stream, const KernelCfg& kernel,
                                                       const ModelParams* params = nullptr) {
  stream.validate();
  const int N = stream.N();
  auto feats = [&](const TaskSnapshot& s) { return params ? embed(*params, s.features) : s.features; };
  std::vector<Matrix> src, tgt;
  for (const auto& s : stream.sources) src.push_back(feats(s));
  for (const auto& t : stream.targets) tgt.push_back(feats(t));

  KernelCfg k = kernel;
  if (!k.bandwidth) {
    std::vector<Matrix> all = src;
    all.insert(all.end(), tgt.begin(), tgt.end());
    Matrix pooled(0, all.front().cols());
    for (const auto& m : all) pooled = vstack(pooled, m);
    k.bandwidth = median_heuristic(pooled, Matrix(0, pooled.cols()));
  }
  auto d = [&](const Matrix& a, const Matrix& b) { return mmd2_biased(a, b, k).value; };

  std::vector<DivergenceRow> rows;
  for (int j = 1; j <= N; ++j) {
    const auto i = static_cast<std::size_t>(j - 1);
    DivergenceRow r;
    r.j = j;
    if (j < N) r.source_chain = d(src[i], src[i + 1]);
    r.source_target = d(src[i], tgt[i]);
    r.target_chain = d(tgt[i], tgt[i + 1]);
    rows.push_back(r);
  }
  return rows;
}

inline std::string divergence_csv(const std::vector<DivergenceRow>& raw, const std::vector<DivergenceRow>* embedded) {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::ostringstream os;
  os << "j,source_chain,source_target,target_chain";
  if (embedded) os << ",embed_source_chain,embed_source_target,embed_target_chain";
  os << "\n";
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    os << r.j << "," << cell(r.source_chain) << "," << format_double(r.source_target) << "," << cell(r.target_chain);
    if (embedded) {
      const auto& e = (*embedded)[i];
      os << "," << cell(e.source_chain) << "," << format_double(e.source_target) << "," << cell(e.target_chain);
    }
    os << "\n";
  }
  return os.str();
}

inline int cmd_divergence(const ExperimentConfig& cfg) {
  const std::filesystem::path out = cfg.output_dir;
  ensure_dir(out);
  const DynamicStream stream = gen_stream(stream_for_seed(cfg, cfg.seeds.front()));
  const auto raw = divergence_evolution(stream, cfg.l2e.kernel);
  std::optional<std::vector<DivergenceRow>> embedded;
  if (!cfg.divergence_checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(cfg.divergence_checkpoint);
    if (ck.params.arch.input_dim != stream.feature_dim)
      throw ShapeError("checkpoint input dimension does not match the stream");
    embedded = divergence_evolution(stream, cfg.l2e.kernel, &ck.params);
  }
  write_text(out / "divergence.csv", divergence_csv(raw, embedded ? &*embedded : nullptr));
  return 0;
}

// ---- bound ----

inline double error_rate(const ModelParams& params, const TaskSnapshot& s, const Labels& labels) {
  const Labels pred = predict(params, s.features);
  std::size_t miss = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) miss += pred[i] != labels[i];
  return static_cast<double>(miss) / static_cast<double>(labels.size());
}

/// Plug-in bound for a trained model: empirical errors on the historical
/// snapshots, sample-level MMD^2 along the chain, and configured values for
/// the terms that cannot be estimated from samples.
inline BoundReport plugin_bound(const DynamicStream& stream, const ModelParams& params, const BoundOptions& opt,
                                const KernelCfg& kernel) {
  stream.validate();
  const int N = stream.N();
  BoundInputs in;
  for (int j = 1; j <= N; ++j) {
    in.source_errors.push_back(error_rate(params, stream.source(j), *stream.source(j).labels));
    const auto& t = stream.target(j);
    if (!t.eval_labels) throw ConfigError("plug-in bound needs evaluation labels on historical targets");
    in.target_errors.push_back(error_rate(params, t, *t.eval_labels));
  }
  auto d = [&](const TaskSnapshot& a, const TaskSnapshot& b) { return mmd2_biased(a.features, b.features, kernel).value; };
  double dmax = d(stream.source(1), stream.target(1));
  for (int j = 1; j < N; ++j) dmax = std::max(dmax, d(stream.source(j), stream.source(j + 1)));
  for (int j = 1; j <= N; ++j) dmax = std::max(dmax, d(stream.target(j), stream.target(j + 1)));
  in.max_divergence = dmax;
  in.max_lambda = opt.lambda;
  in.rademacher = opt.rademacher;
  in.mu = opt.mu;
  in.delta = opt.delta;
  double m_tilde = 0.0;
  for (const auto& s : stream.sources) m_tilde += static_cast<double>(s.rows());
  for (const auto& t : stream.targets) m_tilde += static_cast<double>(t.rows());
  in.m_tilde = m_tilde;
  in.N = N;
  in.variant = BoundVariant::corollary_mmd;
  in.mmd_constant = opt.mmd_constant;
  in.divergence_kind = "mmd2_biased";
  BoundReport r = compute_bound(in);
  r.complexity_term_omitted = opt.rademacher == 0.0;
  r.lambda_estimated = false;
  return r;
}

inline Json sweep_to_json(const SweepReport& s) {
  return Json{{"mode", "discrete"},
              {"instances", s.instances},
              {"instances_holding", s.instances_holding},
              {"hypotheses_checked", s.hypotheses},
              {"failures", s.failures},
              {"min_slack", s.min_slack},
              {"holds", std::to_string(s.instances_holding) + "/" + std::to_string(s.instances)}};
}

inline Json chain_check_to_json(const ChainCheck& c) {
  std::size_t ok = 0;
  for (bool b : c.holds) ok += b;
  return Json{{"mode", "discrete_instance"},
              {"d_tilde", c.d_tilde},
              {"lambda_tilde", c.lambda_tilde},
              {"lhs", c.lhs},
              {"rhs", c.rhs},
              {"slack", c.slack},
              {"holds", std::to_string(ok) + "/" + std::to_string(c.holds.size())}};
}

/// Discrete mode writes the oracle sweep (or the check of one instance file);
/// plug-in mode evaluates the bound for the l2e checkpoint of the first seed.
inline int cmd_bound(const ExperimentConfig& cfg) {
  const std::filesystem::path out = cfg.output_dir;
  ensure_dir(out);
  const BoundOptions& b = cfg.bound;
  Json report;
  int code = 0;
  if (b.mode == "discrete") {
    if (!b.instance_file.empty()) {
      const ChainCheck c = verify_chain_inequality(discrete_instance_from_json(read_json_file(b.instance_file)));
      report = chain_check_to_json(c);
      code = c.all_hold() ? 0 : 1;
    } else {
      const SweepReport s = oracle_sweep(b.instances, b.seed, b.max_K, b.max_H, b.max_N);
      report = sweep_to_json(s);
      code = s.failures == 0 ? 0 : 1;
    }
  } else {
    const std::uint64_t seed = cfg.seeds.front();
    const std::string path =
        b.checkpoint.empty() ? checkpoint_path(out, "l2e", seed, "theta_final").string() : b.checkpoint;
    if (!std::filesystem::exists(path))
      throw ConfigError("plug-in bound needs a trained checkpoint; '" + path + "' does not exist (run first)");
    const Checkpoint ck = load_checkpoint(path);
    const DynamicStream stream = gen_stream(stream_for_seed(cfg, seed));
    const KernelCfg kernel = KernelCfg::fixed(
        resolve_bandwidth(stream.source(1).features, stream.target(1).features, cfg.l2e.kernel), cfg.l2e.kernel.multipliers);
    report = bound_report_to_json(plugin_bound(stream, ck.params, b, kernel));
    report["mode"] = "plugin";
    report["checkpoint"] = std::filesystem::path(path).filename().string();
  }
  write_text(out / "bound.json", report.dump(2) + "\n");
  return code;
}

}  // namespace l2e
