// Command line front end: generate | run | divergence | bound.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "l2e/l2e.hpp"

namespace {

std::vector<std::string> split_methods(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic transfer learning lab"};
  app.require_subcommand(1);

  l2e::CommandOptions opt;
  std::string methods;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out_dir, "output directory, overrides the config");
    sub->add_option("--seed-override", seed, "run a single seed instead of the config's seed list");
    sub->add_option("--method", methods, "comma-separated methods, overrides the config");
  };
  auto* gen = app.add_subcommand("generate", "write the stream snapshots as CSV");
  auto* run = app.add_subcommand("run", "run L2E and baselines, write results.json and summary.csv");
  auto* div = app.add_subcommand("divergence", "write divergence.csv along the stream");
  auto* bnd = app.add_subcommand("bound", "write bound.json");
  for (auto* s : {gen, run, div, bnd}) add_common(s);

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto* s : {gen, run, div, bnd})
      if (s->parsed() && s->count("--seed-override")) opt.seed_override = seed;
    opt.methods = split_methods(methods);
    const l2e::ExperimentConfig cfg = l2e::resolve_config(opt);
    if (gen->parsed()) return l2e::cmd_generate(cfg);
    if (run->parsed()) return l2e::cmd_run(cfg);
    if (div->parsed()) return l2e::cmd_divergence(cfg);
    return l2e::cmd_bound(cfg);
  } catch (const l2e::Error& e) {
    std::cerr << "error [" << l2e::kind_name(e.kind()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
