#pragma once

// Experiment configuration, checkpoints and result serialization.
//
// The config is one JSON document. Unknown keys and ill-typed values are all
// collected and reported together, so a broken config fails once with every
// problem listed.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "l2e/baselines.hpp"
#include "l2e/bounds.hpp"
#include "l2e/meta.hpp"
#include "l2e/taskstream.hpp"

namespace l2e {

using Json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "l2e-checkpoint";

struct BoundOptions {
  std::string mode = "discrete";  // discrete | plugin
  int instances = 200;
  std::uint64_t seed = 0;
  int max_K = 6;
  int max_H = 32;
  int max_N = 4;
  std::string instance_file;  // optional single discrete instance
  std::string checkpoint;     // plugin mode; defaults to the l2e run of the first seed
  double delta = 0.05;
  double mu = 1.0;
  double rademacher = 0.0;
  double lambda = 0.0;
  double mmd_constant = 1.0;
};

struct ExperimentConfig {
  StreamCfg stream;
  L2ECfg l2e;
  std::vector<std::string> methods{"l2e"};
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  std::string divergence_checkpoint;  // optional: adds embedding-level columns
  BoundOptions bound;
  Json raw;  // the document as given, for hashing
};

namespace detail {

// Reads typed fields out of one JSON object and records every problem.
class Reader {
 public:
  Reader(const Json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const Json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned()) throw std::invalid_argument("expected a nonnegative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      errors_.push_back(path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return obj_.is_object() && obj_.contains(key); }
  const Json& at(const char* key) {
    seen_.push_back(key);
    return obj_.at(key);
  }
  void error(const std::string& key, const std::string& msg) { errors_.push_back(path_ + "." + key + ": " + msg); }
  const std::string& path() const { return path_; }

  void reject_unknown() {
    if (!obj_.is_object()) return;
    for (const auto& [k, v] : obj_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) errors_.push_back(path_ + "." + k + ": unknown key");
  }

 private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::vector<std::string> seen_;
};

inline void read_noise(Reader& r, const char* key, NoiseSchedule& out, std::vector<std::string>& errors) {
  if (!r.has(key)) return;
  Reader n(r.at(key), r.path() + "." + key, errors);
  n.get("offset", out.offset);
  n.get("slope", out.slope);
  n.reject_unknown();
}

inline void read_stream(const Json& j, StreamCfg& s, std::vector<std::string>& errors) {
  Reader r(j, "stream", errors);
  std::string gen = "two_moons";
  r.get("generator", gen);
  if (gen == "two_moons") s.generator = Generator::two_moons;
  else if (gen == "gaussian_mixture") s.generator = Generator::gaussian_mixture;
  else if (gen == "csv") s.generator = Generator::csv;
  else r.error("generator", "unknown generator '" + gen + "' (two_moons, gaussian_mixture, csv)");
  r.get("m", s.m);
  r.get("N", s.N);
  r.get("source_rotation", s.source_rotation);
  r.get("target_rotation", s.target_rotation);
  r.get("drift_scale", s.drift_scale);
  read_noise(r, "source_noise", s.source_noise, errors);
  read_noise(r, "target_noise", s.target_noise, errors);
  r.get("noise_unit", s.noise_unit);
  r.get("base_noise", s.base_noise);
  r.get("seed", s.seed);
  r.get("num_classes", s.num_classes);
  r.get("radius", s.radius);
  r.get("mixture_sigma", s.mixture_sigma);
  r.get("shared_base", s.shared_base);
  r.get("resample_per_step", s.resample_per_step);
  r.get("source_csv", s.source_csv);
  r.get("target_csv", s.target_csv);
  r.reject_unknown();
}

inline void read_kernel(Reader& r, KernelCfg& k, std::vector<std::string>& errors) {
  if (!r.has("kernel")) return;
  Reader kr(r.at("kernel"), r.path() + ".kernel", errors);
  if (kr.has("bandwidth")) {
    const Json& bw = kr.at("bandwidth");
    if (bw.is_string() && bw.get<std::string>() == "median") k.bandwidth.reset();
    else if (bw.is_number()) k.bandwidth = bw.get<double>();
    else kr.error("bandwidth", "expected \"median\" or a positive number");
  }
  kr.get("multipliers", k.multipliers);
  kr.reject_unknown();
}

inline void read_l2e(const Json& j, L2ECfg& c, std::vector<std::string>& errors) {
  Reader r(j, "l2e", errors);
  r.get("gamma", c.gamma);
  r.get("p_percent", c.p_percent);
  r.get("inner_lr", c.inner_lr);
  r.get("inner_steps", c.inner_steps);
  r.get("outer_lr", c.outer_lr);
  r.get("outer_epochs", c.outer_epochs);
  r.get("batch_size", c.batch_size);
  r.get("val_count", c.val_count);
  read_kernel(r, c.kernel, errors);
  r.get("pseudo_weight", c.pseudo_weight);
  r.get("warm_start", c.warm_start);
  r.get("hidden_dims", c.hidden_dims);
  r.get("embed_dim", c.embed_dim);
  r.reject_unknown();
}

inline void read_bound(const Json& j, BoundOptions& b, std::vector<std::string>& errors) {
  Reader r(j, "bound", errors);
  r.get("mode", b.mode);
  if (b.mode != "discrete" && b.mode != "plugin") r.error("mode", "expected \"discrete\" or \"plugin\"");
  r.get("instances", b.instances);
  r.get("seed", b.seed);
  r.get("max_K", b.max_K);
  r.get("max_H", b.max_H);
  r.get("max_N", b.max_N);
  r.get("instance_file", b.instance_file);
  r.get("checkpoint", b.checkpoint);
  r.get("delta", b.delta);
  r.get("mu", b.mu);
  r.get("rademacher", b.rademacher);
  r.get("lambda", b.lambda);
  r.get("mmd_constant", b.mmd_constant);
  r.reject_unknown();
  if (b.instances < 1) r.error("instances", "must be >= 1");
  if (!(b.delta > 0.0 && b.delta < 1.0)) r.error("delta", "must lie in (0, 1)");
}

inline std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() == 1 ? "" : "s") + "):";
  for (const auto& e : errors) msg += "\n  " + e;
  return msg;
}

}  // namespace detail

/// Parses and validates a config document. Relative CSV and checkpoint paths
/// are resolved against base_dir.
inline ExperimentConfig parse_config(const Json& doc, const std::filesystem::path& base_dir = {}) {
  std::vector<std::string> errors;
  ExperimentConfig cfg;
  cfg.raw = doc;
  detail::Reader top(doc, "config", errors);
  if (top.has("stream")) detail::read_stream(top.at("stream"), cfg.stream, errors);
  if (top.has("l2e")) detail::read_l2e(top.at("l2e"), cfg.l2e, errors);
  if (top.has("bound")) detail::read_bound(top.at("bound"), cfg.bound, errors);
  top.get("methods", cfg.methods);
  top.get("seeds", cfg.seeds);
  top.get("output_dir", cfg.output_dir);
  top.get("divergence_checkpoint", cfg.divergence_checkpoint);
  top.reject_unknown();

  if (cfg.seeds.empty()) errors.push_back("config.seeds: at least one seed is required");
  if (cfg.methods.empty()) errors.push_back("config.methods: at least one method is required");
  for (const auto& m : cfg.methods) {
    if (m == "l2e") continue;
    try {
      parse_baseline(m);
    } catch (const Error& e) {
      errors.push_back("config.methods: " + std::string(e.what()));
    }
  }
  if (cfg.output_dir.empty()) errors.push_back("config.output_dir: must not be empty");
  // Semantic checks run only when the document itself is well formed.
  if (errors.empty()) {
    auto semantic = [&](const char* where, auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        errors.push_back(std::string(where) + ": " + e.what());
      }
    };
    semantic("config.stream", [&] { cfg.stream.validate(); });
    semantic("config.l2e", [&] { cfg.l2e.validate(); });
  }
  if (!errors.empty()) throw ConfigError(detail::join_errors(errors));

  auto resolve = [&](std::string& p) {
    if (!p.empty() && !base_dir.empty() && std::filesystem::path(p).is_relative()) p = (base_dir / p).string();
  };
  for (auto& p : cfg.stream.source_csv) resolve(p);
  for (auto& p : cfg.stream.target_csv) resolve(p);
  resolve(cfg.bound.instance_file);
  return cfg;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  return parse_config(read_json_file(path), std::filesystem::path(path).parent_path());
}

/// Stable hash of the config document (keys are serialized sorted).
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a(cfg.raw.dump());
  return os.str();
}

/// Stream config of one run: the run seed replaces the stream seed.
inline StreamCfg stream_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  StreamCfg s = cfg.stream;
  s.seed = seed;
  return s;
}

inline L2ECfg l2e_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  L2ECfg c = cfg.l2e;
  c.seed = seed;
  return c;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

// ---- checkpoints ----

struct CheckpointMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string method;
  std::string tag;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  ModelParams params;
  CheckpointMeta meta;
};

inline Json arch_to_json(const Arch& a) {
  auto act = [](Activation x) { return x == Activation::tanh ? "tanh" : "identity"; };
  return Json{{"input_dim", a.input_dim},
              {"hidden_dims", a.hidden_dims},
              {"embed_dim", a.embed_dim},
              {"num_classes", a.num_classes},
              {"hidden_activation", act(a.hidden_activation)},
              {"embed_activation", act(a.embed_activation)}};
}

inline Arch arch_from_json(const Json& j) {
  auto act = [](const Json& v) {
    const auto s = v.get<std::string>();
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw FormatError("unknown activation '" + s + "'");
  };
  Arch a;
  a.input_dim = j.at("input_dim").get<int>();
  a.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  a.embed_dim = j.at("embed_dim").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.hidden_activation = act(j.at("hidden_activation"));
  a.embed_activation = act(j.at("embed_activation"));
  return a;
}

inline Json checkpoint_to_json(const ModelParams& params, const CheckpointMeta& meta) {
  const Vector flat = params.flatten();
  return Json{{"format", kCheckpointFormat},
              {"version", kCheckpointVersion},
              {"arch", arch_to_json(params.arch)},
              {"params", std::vector<double>(flat.data(), flat.data() + flat.size())},
              {"metadata", {{"config_hash", meta.config_hash}, {"seed", meta.seed}, {"method", meta.method}, {"tag", meta.tag}}}};
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta) {
  write_text(path, checkpoint_to_json(params, meta).dump(1) + "\n");
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  try {
    if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat) throw FormatError("not an l2e checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    Checkpoint c;
    c.version = version;
    const Arch arch = arch_from_json(j.at("arch"));
    arch.validate();
    const auto flat = j.at("params").get<std::vector<double>>();
    const ModelParams zero = ModelParams::zeros(arch);
    if (flat.size() != zero.size())
      throw FormatError("checkpoint holds " + std::to_string(flat.size()) + " parameters, architecture needs " +
                        std::to_string(zero.size()));
    c.params = ModelParams::unflatten(arch, Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(flat.size())).eval());
    const Json& m = j.at("metadata");
    c.meta.config_hash = m.at("config_hash").get<std::string>();
    c.meta.seed = m.at("seed").get<std::uint64_t>();
    c.meta.method = m.at("method").get<std::string>();
    c.meta.tag = m.at("tag").get<std::string>();
    return c;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("'" + path + "' is not a complete checkpoint: " + e.what());
  }
  return checkpoint_from_json(j);
}

// ---- results ----

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json numbers_or_null(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number_or_null(x));
  return a;
}

/// RunResult without wall time, so results files are reproducible.
inline Json run_result_to_json(const RunResult& r) {
  return Json{{"method", r.method},
              {"seed", r.seed},
              {"status", "ok"},
              {"acc", r.acc_newest},
              {"h_acc", r.h_acc},
              {"historical_acc", r.historical_acc},
              {"historical_acc_unadapted", r.historical_acc_unadapted},
              {"pseudo_label_acc", numbers_or_null(r.pseudo_label_acc)},
              {"pairs", r.pairs}};
}

inline Json bound_report_to_json(const BoundReport& b) {
  return Json{{"variant", bound_variant_name(b.variant)},
              {"divergence_kind", b.divergence_kind},
              {"mean_empirical_error", b.mean_empirical_error},
              {"d_tilde", b.d_tilde},
              {"lambda_tilde", b.lambda_tilde},
              {"drift_term", b.drift_term},
              {"rademacher", b.rademacher},
              {"concentration", b.concentration},
              {"mu", b.mu},
              {"delta", b.delta},
              {"m_tilde", b.m_tilde},
              {"N", b.N},
              {"complexity_term_omitted", b.complexity_term_omitted},
              {"lambda_estimated", b.lambda_estimated},
              {"total", b.total}};
}

inline DiscreteInstance discrete_instance_from_json(const Json& j) {
  try {
    DiscreteInstance inst;
    inst.K = j.at("K").get<int>();
    auto tasks = [](const Json& a) {
      std::vector<DiscreteTask> out;
      for (const auto& t : a) out.push_back({t.at("p").get<std::vector<double>>(), t.at("f").get<std::vector<int>>()});
      return out;
    };
    inst.sources = tasks(j.at("sources"));
    inst.targets = tasks(j.at("targets"));
    inst.H = j.at("H").get<std::vector<Hypothesis>>();
    inst.validate();
    return inst;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed discrete instance: ") + e.what());
  }
}

}  // namespace l2e
