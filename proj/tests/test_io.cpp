#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace l2e;
using namespace l2e::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("l2e_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json small_config(const fs::path& out) {
  return Json{{"stream", {{"m", 30}, {"N", 3}, {"source_rotation", -8}, {"target_rotation", 8}}},
              {"l2e", {{"val_count", 10}, {"outer_epochs", 2}, {"hidden_dims", {6}}, {"embed_dim", 4}}},
              {"methods", {"l2e", "source_only"}},
              {"seeds", {0, 1}},
              {"output_dir", out.string()}};
}

std::string config_error(const Json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto cfg = parse_config(Json{{"l2e", {{"gamma", 0.3}, {"kernel", {{"bandwidth", 2.0}}}}}, {"seeds", {4, 5}}});
  EXPECT_EQ(cfg.l2e.gamma, 0.3);
  EXPECT_EQ(*cfg.l2e.kernel.bandwidth, 2.0);
  EXPECT_EQ(cfg.l2e.p_percent, 80.0);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(cfg.stream.N, 5);
  EXPECT_FALSE(parse_config(Json{{"l2e", {{"kernel", {{"bandwidth", "median"}}}}}}).l2e.kernel.bandwidth.has_value());
}

TEST(Config, ReportsEveryProblemAtOnce) {
  const auto msg = config_error(Json{{"stream", {{"m", "many"}, {"bogus", 1}}},
                                     {"l2e", {{"gamma", true}}},
                                     {"methods", {"l2e", "magic"}},
                                     {"seeds", Json::array()},
                                     {"extra", 0}});
  EXPECT_NE(msg.find("stream.m"), std::string::npos);
  EXPECT_NE(msg.find("stream.bogus: unknown key"), std::string::npos);
  EXPECT_NE(msg.find("l2e.gamma"), std::string::npos);
  EXPECT_NE(msg.find("magic"), std::string::npos);
  EXPECT_NE(msg.find("config.seeds"), std::string::npos);
  EXPECT_NE(msg.find("config.extra: unknown key"), std::string::npos);
  EXPECT_NE(msg.find("6 problems"), std::string::npos);
}

TEST(Config, SemanticErrors) {
  EXPECT_NE(config_error(Json{{"stream", {{"N", 1}}}}).find("N must be"), std::string::npos);
  EXPECT_NE(config_error(Json{{"l2e", {{"p_percent", 0}}}}).find("p_percent"), std::string::npos);
  EXPECT_NE(config_error(Json{{"bound", {{"delta", 2.0}}}}).find("bound.delta"), std::string::npos);
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = parse_config(Json{{"seeds", {1}}});
  const auto b = parse_config(Json{{"seeds", {1}}});
  const auto c = parse_config(Json{{"seeds", {2}}});
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = temp_dir("ckpt");
  const Arch arch{2, {7}, 4, 3};
  const auto p = init_params(arch, 12);
  save_checkpoint(dir / "c.json", p, {"abc", 3, "l2e", "theta_final"});
  const auto back = load_checkpoint((dir / "c.json").string());
  EXPECT_TRUE(bitwise_equal(back.params, p));
  EXPECT_EQ(back.meta.config_hash, "abc");
  EXPECT_EQ(back.meta.seed, 3u);
  Rng rng(1);
  const Matrix X = random_matrix(10, 2, rng);
  EXPECT_TRUE((forward(back.params, X).probs.array() == forward(p, X).probs.array()).all());
}

TEST(Checkpoint, DamagedFilesAreFormatErrors) {
  const auto dir = temp_dir("ckpt_bad");
  const auto p = init_params(Arch{2, {5}, 3, 2}, 1);
  save_checkpoint(dir / "c.json", p, {"h", 0, "l2e", "theta_init"});
  const std::string text = slurp(dir / "c.json");
  std::ofstream(dir / "trunc.json") << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_checkpoint((dir / "trunc.json").string()), FormatError);

  Json j = Json::parse(text);
  j["version"] = 99;
  std::ofstream(dir / "ver.json") << j.dump();
  EXPECT_THROW(load_checkpoint((dir / "ver.json").string()), FormatError);

  j = Json::parse(text);
  j["params"].erase(j["params"].size() - 1);
  std::ofstream(dir / "len.json") << j.dump();
  EXPECT_THROW(load_checkpoint((dir / "len.json").string()), FormatError);
  EXPECT_THROW(load_checkpoint((dir / "missing.json").string()), IoError);
}

TEST(Commands, GenerateWritesEverySnapshotDeterministically) {
  const auto dir = temp_dir("generate");
  auto cfg = parse_config(small_config(dir / "a"));
  cmd_generate(cfg);
  cfg.output_dir = (dir / "b").string();
  cmd_generate(cfg);
  int csv = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    if (e.path().extension() == ".csv") ++csv;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename()));
  }
  EXPECT_EQ(csv, 3 + 4);
  const auto manifest = read_json_file((dir / "a" / "stream.json").string());
  EXPECT_EQ(manifest["N"], 3);
  EXPECT_EQ(manifest["d"], 2);
  const auto stream = gen_stream(stream_for_seed(cfg, 0));
  const auto back = load_csv((dir / "a" / "target_4.csv").string(), true);
  EXPECT_TRUE((back.features.array() == stream.target(4).features.array()).all());
}

TEST(Commands, RunIsReproducibleAndAggregatesExactly) {
  const auto dir = temp_dir("run");
  auto cfg = parse_config(small_config(dir / "a"));
  std::ostringstream log;
  EXPECT_EQ(cmd_run(cfg, log), 0);
  cfg.output_dir = (dir / "b").string();
  EXPECT_EQ(cmd_run(cfg, log), 0);
  EXPECT_EQ(slurp(dir / "a" / "summary.csv"), slurp(dir / "b" / "summary.csv"));
  EXPECT_EQ(slurp(dir / "a" / "results.json"), slurp(dir / "b" / "results.json"));

  std::istringstream csv(slurp(dir / "a" / "summary.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "method,seed,acc,h_acc");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  ASSERT_EQ(rows.size(), 4u + 2u);
  const double hand = (std::stod(rows[0][2]) + std::stod(rows[1][2])) / 2.0;
  EXPECT_EQ(rows[4][1], "mean±std");
  EXPECT_DOUBLE_EQ(std::stod(rows[4][2].substr(0, rows[4][2].find("±"))), hand);

  const auto results = read_json_file((dir / "a" / "results.json").string());
  const auto ck = load_checkpoint((dir / "a" / "checkpoints" / "l2e_seed1_theta_final.json").string());
  EXPECT_EQ(ck.meta.config_hash, results["config_hash"]);
  EXPECT_EQ(results["runs"].size(), 4u);
}

TEST(Commands, FailingRunsAreRecordedAndOthersContinue) {
  const auto dir = temp_dir("run_fail");
  Json doc = small_config(dir);
  doc["l2e"]["val_count"] = 30;  // no room for a training split in any pair
  doc["seeds"] = {0};
  const auto cfg = parse_config(doc);
  std::ostringstream log;
  EXPECT_EQ(cmd_run(cfg, log), 1);
  const auto results = read_json_file((dir / "results.json").string());
  EXPECT_EQ(results["runs"][0]["status"], "failed");
  EXPECT_EQ(results["runs"][1]["status"], "ok");
  EXPECT_NE(slurp(dir / "summary.csv").find("source_only,0,"), std::string::npos);
}

TEST(Commands, DivergenceTable) {
  const auto dir = temp_dir("divergence");
  Json doc = small_config(dir);
  doc["stream"]["m"] = 100;
  auto cfg = parse_config(doc);
  cmd_divergence(cfg);
  std::istringstream csv(slurp(dir / "divergence.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "j,source_chain,source_target,target_chain");
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[2].rfind("3,,", 0), 0u);

  // No drift: every value is small.
  StreamCfg still = cfg.stream;
  still.source_rotation = still.target_rotation = 0.0;
  still.target_noise = {0.0, 0.0};
  still.shared_base = true;
  for (const auto& r : divergence_evolution(gen_stream(still), KernelCfg::median())) {
    EXPECT_LT(r.source_target, 0.05);
    EXPECT_LT(*r.target_chain, 0.05);
  }

  // A checkpoint adds the embedding-level columns.
  save_checkpoint(dir / "c.json", init_params(cfg.l2e.arch_for(gen_stream(cfg.stream)), 1), {"h", 0, "l2e", "x"});
  cfg.divergence_checkpoint = (dir / "c.json").string();
  cmd_divergence(cfg);
  EXPECT_NE(slurp(dir / "divergence.csv").find("embed_source_target"), std::string::npos);
}

TEST(Commands, BoundModes) {
  const auto dir = temp_dir("bound");
  Json doc = small_config(dir);
  doc["bound"] = {{"mode", "discrete"}, {"instances", 200}};
  cmd_bound(parse_config(doc));
  EXPECT_EQ(read_json_file((dir / "bound.json").string())["holds"], "200/200");

  doc["bound"] = {{"mode", "plugin"}};
  EXPECT_THROW(cmd_bound(parse_config(doc)), ConfigError);

  std::ostringstream log;
  doc["methods"] = {"l2e"};
  doc["seeds"] = {0};
  cmd_run(parse_config(doc), log);
  cmd_bound(parse_config(doc));
  const auto report = read_json_file((dir / "bound.json").string());
  EXPECT_NEAR(report["total"].get<double>(),
              report["mean_empirical_error"].get<double>() + report["drift_term"].get<double>() +
                  report["rademacher"].get<double>() + report["concentration"].get<double>(),
              1e-12);
  EXPECT_TRUE(report["complexity_term_omitted"].get<bool>());
  EXPECT_FALSE(report["lambda_estimated"].get<bool>());

  doc["bound"]["delta"] = 0.025;
  cmd_bound(parse_config(doc));
  const auto halved = read_json_file((dir / "bound.json").string());
  EXPECT_EQ(halved["drift_term"], report["drift_term"]);
  EXPECT_EQ(halved["mean_empirical_error"], report["mean_empirical_error"]);
  EXPECT_GT(halved["concentration"].get<double>(), report["concentration"].get<double>());
}

TEST(Commands, DiscreteInstanceFile) {
  const auto dir = temp_dir("bound_file");
  const Json inst{{"K", 2},
                  {"sources", {{{"p", {0.5, 0.5}}, {"f", {0, 1}}}}},
                  {"targets", {{{"p", {0.5, 0.5}}, {"f", {0, 1}}}, {{"p", {0.6, 0.4}}, {"f", {0, 1}}}}},
                  {"H", {{0, 1}, {1, 1}}}};
  std::ofstream(dir / "inst.json") << inst.dump();
  Json doc = small_config(dir);
  doc["bound"] = {{"mode", "discrete"}, {"instance_file", (dir / "inst.json").string()}};
  EXPECT_EQ(cmd_bound(parse_config(doc)), 0);
  EXPECT_EQ(read_json_file((dir / "bound.json").string())["holds"], "2/2");
}
