#pragma once

// Synthetic dynamic source/target task streams, CSV ingestion and splitting.
//
// A stream holds labeled source snapshots 1..N and target snapshots 1..N+1.
// Target labels live in `eval_labels` and are only read for scoring; the meta
// engine works on `training_view()`, where they are removed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "l2e/error.hpp"
#include "l2e/random.hpp"
#include "l2e/types.hpp"

namespace l2e {

enum class Role { source, target };

inline const char* role_name(Role r) { return r == Role::source ? "source" : "target"; }

struct TaskSnapshot {
  Matrix features;
  std::optional<Labels> labels;
  std::optional<Labels> eval_labels;
  int time_index = 1;
  Role role = Role::source;

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }

  void validate(int num_classes) const {
    std::string who = std::string(role_name(role)) + " snapshot " + std::to_string(time_index);
    if (features.rows() < 1) throw DataError(who + " is empty");
    if (time_index < 1) throw DataError(who + " has time index < 1");
    auto check = [&](const std::optional<Labels>& l, const char* what) {
      if (!l) return;
      if (l->size() != rows()) throw ShapeError(who + ": " + what + " count does not match rows");
      for (int y : *l)
        if (y < 0 || y >= num_classes) throw DataError(who + ": " + what + " value " + std::to_string(y) + " out of range");
    };
    check(labels, "label");
    check(eval_labels, "eval label");
    if (role == Role::source && !labels) throw DataError(who + " has no labels");
    if (role == Role::target && labels) throw DataError(who + " carries training labels");
  }
};

struct DynamicStream {
  std::vector<TaskSnapshot> sources;  // time 1..N
  std::vector<TaskSnapshot> targets;  // time 1..N+1
  int num_classes = 2;
  int feature_dim = 2;

  int N() const { return static_cast<int>(sources.size()); }

  const TaskSnapshot& source(int j) const { return sources.at(static_cast<std::size_t>(j - 1)); }
  const TaskSnapshot& target(int j) const { return targets.at(static_cast<std::size_t>(j - 1)); }

  void validate() const {
    if (sources.empty()) throw DataError("stream has no source snapshots");
    if (targets.size() != sources.size() + 1)
      throw DataError("stream needs exactly one more target snapshot than source snapshots");
    auto check_role = [&](const std::vector<TaskSnapshot>& snaps, Role role) {
      for (std::size_t i = 0; i < snaps.size(); ++i) {
        const auto& s = snaps[i];
        if (s.role != role) throw DataError("snapshot role mismatch");
        if (s.time_index != static_cast<int>(i) + 1) throw DataError("snapshot time indices must be 1, 2, ...");
        if (s.features.cols() != feature_dim) throw ShapeError("snapshot feature width differs from stream");
        s.validate(num_classes);
      }
    };
    check_role(sources, Role::source);
    check_role(targets, Role::target);
  }

  /// Copy with every target eval label removed.
  DynamicStream training_view() const {
    DynamicStream v = *this;
    for (auto& t : v.targets) t.eval_labels.reset();
    return v;
  }
};

struct NoiseSchedule {
  double offset = 0.0;
  double slope = 0.0;

  double at(int j) const { return offset + slope * static_cast<double>(j - 1); }
};

enum class Generator { two_moons, gaussian_mixture, csv };

struct StreamCfg {
  Generator generator = Generator::two_moons;
  int m = 200;
  int N = 5;
  // Rotation per time step in degrees, multiplied by drift_scale.
  double source_rotation = -30.0;
  double target_rotation = 15.0;
  double drift_scale = 1.0;
  NoiseSchedule source_noise{0.0, 0.0};
  NoiseSchedule target_noise{0.0, 0.05};
  double noise_unit = 1.0;
  // Noise of the base sample itself.
  double base_noise = 0.1;
  std::uint64_t seed = 0;
  int num_classes = 2;  // gaussian_mixture only
  double radius = 2.0;
  double mixture_sigma = 0.5;
  // Draw the target base with the source base seed.
  bool shared_base = false;
  // Re-draw the base at every step instead of transforming one base.
  bool resample_per_step = false;
  std::vector<std::string> source_csv;
  std::vector<std::string> target_csv;

  void validate() const {
    if (N < 2) throw ConfigError("stream N must be >= 2");
    if (generator != Generator::csv && m < 8) throw ConfigError("stream m must be >= 8");
    for (int j = 1; j <= N + 1; ++j)
      if (source_noise.at(j) < 0.0 || target_noise.at(j) < 0.0)
        throw ConfigError("noise schedules must be nonnegative");
    if (base_noise < 0.0 || noise_unit < 0.0) throw ConfigError("noise levels must be nonnegative");
    if (generator == Generator::gaussian_mixture && (num_classes < 2 || !(radius > 0.0)))
      throw ConfigError("gaussian_mixture needs num_classes >= 2 and radius > 0");
    if (generator == Generator::csv &&
        (source_csv.size() != static_cast<std::size_t>(N) || target_csv.size() != static_cast<std::size_t>(N) + 1))
      throw ConfigError("csv generator needs N source paths and N+1 target paths");
  }
};

struct LabeledSample {
  Matrix features;
  Labels labels;
};

/// Two interleaving half circles; first ceil(m/2) points label 0.
inline LabeledSample make_moons(int m, double noise, std::uint64_t seed) {
  if (m < 2) throw ConfigError("make_moons needs m >= 2");
  const int upper = (m + 1) / 2;
  const int lower = m / 2;
  LabeledSample s{Matrix(m, 2), Labels(static_cast<std::size_t>(m))};
  auto grid = [](int i, int n) { return n == 1 ? 0.0 : std::numbers::pi * i / (n - 1); };
  for (int i = 0; i < upper; ++i) {
    double t = grid(i, upper);
    s.features(i, 0) = std::cos(t);
    s.features(i, 1) = std::sin(t);
    s.labels[static_cast<std::size_t>(i)] = 0;
  }
  for (int i = 0; i < lower; ++i) {
    double t = grid(i, lower);
    s.features(upper + i, 0) = 1.0 - std::cos(t);
    s.features(upper + i, 1) = 0.5 - std::sin(t);
    s.labels[static_cast<std::size_t>(upper + i)] = 1;
  }
  if (noise > 0.0) {
    Rng rng(derive_seed(seed, "make_moons"));
    std::normal_distribution<double> normal(0.0, noise);
    for (Eigen::Index i = 0; i < s.features.rows(); ++i)
      for (Eigen::Index c = 0; c < 2; ++c) s.features(i, c) += normal(rng);
  }
  return s;
}

/// C isotropic Gaussian blobs on a circle; row i belongs to class i mod C.
inline LabeledSample make_gaussian_mixture(int m, int C, double radius, double sigma, std::uint64_t seed) {
  if (C < 2) throw ConfigError("make_gaussian_mixture needs C >= 2");
  if (!(radius > 0.0)) throw ConfigError("make_gaussian_mixture needs radius > 0");
  LabeledSample s{Matrix(m, 2), Labels(static_cast<std::size_t>(m))};
  Rng rng(derive_seed(seed, "gaussian_mixture"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < m; ++i) {
    int c = i % C;
    double angle = 2.0 * std::numbers::pi * c / C;
    s.features(i, 0) = radius * std::cos(angle);
    s.features(i, 1) = radius * std::sin(angle);
    if (sigma > 0.0) {
      s.features(i, 0) += sigma * normal(rng);
      s.features(i, 1) += sigma * normal(rng);
    }
    s.labels[static_cast<std::size_t>(i)] = c;
  }
  return s;
}

inline Matrix rotate(const Matrix& features, double degrees) {
  if (features.cols() != 2) throw ShapeError("rotate needs 2-D features");
  if (degrees == 0.0) return features;
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  Matrix out(features.rows(), 2);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out(i, 0) = c * features(i, 0) - s * features(i, 1);
    out(i, 1) = s * features(i, 0) + c * features(i, 1);
  }
  return out;
}

namespace detail {

inline void add_noise(Matrix& x, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(i, c) += normal(rng);
}

inline LabeledSample draw_base(const StreamCfg& cfg, std::uint64_t seed) {
  if (cfg.generator == Generator::gaussian_mixture)
    return make_gaussian_mixture(cfg.m, cfg.num_classes, cfg.radius, cfg.mixture_sigma, seed);
  return make_moons(cfg.m, cfg.base_noise, seed);
}

}  // namespace detail

TaskSnapshot load_csv(const std::string& path, bool has_labels, int num_classes = std::numeric_limits<int>::max());

/// Builds the drifting stream: snapshot j of a role is its base sample rotated
/// by rho * (j - 1) degrees plus Gaussian noise of std sigma(j).
inline DynamicStream gen_stream(const StreamCfg& cfg) {
  cfg.validate();
  DynamicStream stream;
  stream.feature_dim = 2;
  stream.num_classes = cfg.generator == Generator::gaussian_mixture ? cfg.num_classes : 2;

  if (cfg.generator == Generator::csv) {
    int max_label = -1;
    for (int j = 1; j <= cfg.N; ++j) {
      auto s = load_csv(cfg.source_csv[static_cast<std::size_t>(j - 1)], true);
      s.role = Role::source;
      s.time_index = j;
      for (int y : *s.labels) max_label = std::max(max_label, y);
      stream.sources.push_back(std::move(s));
    }
    for (int j = 1; j <= cfg.N + 1; ++j) {
      const auto& path = cfg.target_csv[static_cast<std::size_t>(j - 1)];
      std::ifstream probe(path);
      std::string header;
      std::getline(probe, header);
      bool labeled = header.find("label") != std::string::npos;
      auto s = load_csv(path, labeled);
      s.role = Role::target;
      s.time_index = j;
      s.eval_labels = std::move(s.labels);
      s.labels.reset();
      if (s.eval_labels)
        for (int y : *s.eval_labels) max_label = std::max(max_label, y);
      stream.targets.push_back(std::move(s));
    }
    stream.feature_dim = static_cast<int>(stream.sources.front().features.cols());
    stream.num_classes = std::max(2, max_label + 1);
    stream.validate();
    return stream;
  }

  const std::uint64_t source_seed = derive_seed(cfg.seed, "base", 0);
  const std::uint64_t target_seed = cfg.shared_base ? source_seed : derive_seed(cfg.seed, "base", 1);
  const LabeledSample base_s = detail::draw_base(cfg, source_seed);
  const LabeledSample base_t = detail::draw_base(cfg, target_seed);

  auto make = [&](Role role, int j) {
    const bool src = role == Role::source;
    const double rho = (src ? cfg.source_rotation : cfg.target_rotation) * cfg.drift_scale;
    const double sigma = src ? cfg.source_noise.at(j) : cfg.target_noise.at(j) * cfg.noise_unit;
    LabeledSample base = cfg.resample_per_step
                             ? detail::draw_base(cfg, derive_seed(src ? source_seed : target_seed, "step", j))
                             : (src ? base_s : base_t);
    TaskSnapshot s;
    s.features = rotate(base.features, rho * (j - 1));
    detail::add_noise(s.features, sigma, derive_seed(cfg.seed, src ? "source_noise" : "target_noise", j));
    s.time_index = j;
    s.role = role;
    if (src)
      s.labels = std::move(base.labels);
    else
      s.eval_labels = std::move(base.labels);
    return s;
  };
  for (int j = 1; j <= cfg.N; ++j) stream.sources.push_back(make(Role::source, j));
  for (int j = 1; j <= cfg.N + 1; ++j) stream.targets.push_back(make(Role::target, j));
  stream.validate();
  return stream;
}

/// Header "f0,...,f{d-1}[,label]", one row per example.
inline TaskSnapshot load_csv(const std::string& path, bool has_labels, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const bool file_labeled = !header.empty() && header.back() == "label";
  if (has_labels && !file_labeled) throw ParseError(path + ":1: expected a trailing 'label' column");
  const std::size_t d = header.size() - (file_labeled ? 1 : 0);
  if (d == 0) throw ParseError(path + ":1: no feature columns");
  for (std::size_t c = 0; c < d; ++c)
    if (header[c] != "f" + std::to_string(c)) throw ParseError(path + ":1: expected column f" + std::to_string(c));

  std::vector<double> values;
  Labels labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (cells.size() != header.size())
      throw ParseError(where + "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        throw ParseError(where + "non-numeric cell '" + cells[c] + "'");
      }
      if (used != cells[c].size() || !std::isfinite(v)) throw ParseError(where + "non-numeric cell '" + cells[c] + "'");
      values.push_back(v);
    }
    if (file_labeled && has_labels) {
      std::size_t used = 0;
      long y = 0;
      try {
        y = std::stol(cells[d], &used);
      } catch (const std::exception&) {
        throw ParseError(where + "non-integer label '" + cells[d] + "'");
      }
      if (used != cells[d].size()) throw ParseError(where + "non-integer label '" + cells[d] + "'");
      if (y < 0 || y >= num_classes) throw ParseError(where + "label " + std::to_string(y) + " out of range");
      labels.push_back(static_cast<int>(y));
    }
  }
  const std::size_t m = values.size() / d;
  if (m == 0) throw ParseError(path + ": no data rows");
  TaskSnapshot s;
  s.features = Matrix(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) s.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = values[i * d + c];
  if (has_labels) s.labels = std::move(labels);
  return s;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Writes labels (or eval labels for targets) as the trailing column.
inline void save_csv(const TaskSnapshot& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  const auto& labels = s.labels ? s.labels : s.eval_labels;
  for (Eigen::Index c = 0; c < s.features.cols(); ++c) out << (c ? "," : "") << "f" << c;
  if (labels) out << ",label";
  out << "\n";
  for (Eigen::Index i = 0; i < s.features.rows(); ++i) {
    for (Eigen::Index c = 0; c < s.features.cols(); ++c) out << (c ? "," : "") << format_double(s.features(i, c));
    if (labels) out << "," << (*labels)[static_cast<std::size_t>(i)];
    out << "\n";
  }
  if (!out) throw IoError(path + ": write failed");
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded uniform partition of 0..m-1; both parts sorted ascending.
inline SplitIndices split_indices(std::size_t m, std::size_t val_count, std::uint64_t seed) {
  if (val_count < 1 || val_count >= m)
    throw ConfigError("val_count " + std::to_string(val_count) + " must lie in [1, " + std::to_string(m) + ")");
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  SplitIndices s{{idx.begin() + static_cast<std::ptrdiff_t>(val_count), idx.end()},
                 {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(val_count)}};
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

inline TaskSnapshot subset(const TaskSnapshot& s, const std::vector<std::size_t>& rows) {
  TaskSnapshot out;
  out.features = take_rows(s.features, rows);
  if (s.labels) out.labels = take(*s.labels, rows);
  if (s.eval_labels) out.eval_labels = take(*s.eval_labels, rows);
  out.time_index = s.time_index;
  out.role = s.role;
  return out;
}

inline std::pair<TaskSnapshot, TaskSnapshot> split(const TaskSnapshot& s, std::size_t val_count, std::uint64_t seed) {
  auto idx = split_indices(s.rows(), val_count, seed);
  return {subset(s, idx.train), subset(s, idx.val)};
}

/// All snapshots stacked into one (used by the merged-source pipelines).
inline TaskSnapshot concat(const std::vector<TaskSnapshot>& parts, int time_index, Role role) {
  TaskSnapshot out;
  out.time_index = time_index;
  out.role = role;
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.features.rows();
  out.features = Matrix(rows, parts.empty() ? 0 : parts.front().features.cols());
  Eigen::Index at = 0;
  bool labeled = !parts.empty() && std::all_of(parts.begin(), parts.end(), [](const auto& p) { return p.labels.has_value(); });
  bool eval = !parts.empty() && std::all_of(parts.begin(), parts.end(), [](const auto& p) { return p.eval_labels.has_value(); });
  Labels labels, eval_labels;
  for (const auto& p : parts) {
    out.features.middleRows(at, p.features.rows()) = p.features;
    at += p.features.rows();
    if (labeled) labels.insert(labels.end(), p.labels->begin(), p.labels->end());
    if (eval) eval_labels.insert(eval_labels.end(), p.eval_labels->begin(), p.eval_labels->end());
  }
  if (labeled) out.labels = std::move(labels);
  if (eval) out.eval_labels = std::move(eval_labels);
  return out;
}

}  // namespace l2e
