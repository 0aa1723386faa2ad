#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace l2e;
using namespace l2e::testing;

TEST(Baselines, NamesRoundTrip) {
  for (auto k : kAllBaselines) EXPECT_EQ(parse_baseline(baseline_name(k)), k);
  EXPECT_THROW(parse_baseline("nope"), ConfigError);
}

TEST(Baselines, VariantPairSets) {
  for (int N = 2; N <= 6; ++N) {
    const auto stream = gen_stream(small_stream(N, 20, 1));
    L2ECfg cfg = small_l2e();
    cfg.val_count = 5;
    EXPECT_TRUE(build_variant_pairs(BaselineKind::source_only, stream, cfg).empty());
    EXPECT_EQ(build_variant_pairs(BaselineKind::l2e_no_source_evolution, stream, cfg).size(), static_cast<std::size_t>(N + 1));
    EXPECT_EQ(build_variant_pairs(BaselineKind::l2e_merged_source, stream, cfg).size(), static_cast<std::size_t>(N + 1));

    const auto no_hist = build_variant_pairs(BaselineKind::l2e_no_historical_target, stream, cfg);
    EXPECT_EQ(no_hist.size(), static_cast<std::size_t>(N));
    for (const auto& p : no_hist) EXPECT_FALSE(p.is_pseudo());
    EXPECT_EQ(no_hist.back().div_b->time_index, N + 1);

    const auto all = build_variant_pairs(BaselineKind::l2e_all_pairs, stream, cfg);
    EXPECT_EQ(all.size(), static_cast<std::size_t>(all_pairs_count(N)));
    std::set<std::pair<int, int>> links;
    for (const auto& p : all) {
      if (p.div_a->role != p.div_b->role) continue;
      EXPECT_LT(p.div_a->time_index, p.div_b->time_index);
      EXPECT_TRUE(links.insert({p.div_a->time_index * (p.div_a->role == Role::source ? -1 : 1), p.div_b->time_index}).second);
    }
  }
}

TEST(Baselines, AllPairsCount) {
  EXPECT_EQ(all_pairs_count(2), 4);
  EXPECT_EQ(all_pairs_count(5), 22);
}

TEST(Baselines, EveryPipelineRunsOnASmallStream) {
  const auto stream = gen_stream(small_stream(3, 30, 4));
  const L2ECfg cfg = small_l2e(4);
  for (auto k : kAllBaselines) {
    const auto r = run_baseline({k, cfg}, stream);
    EXPECT_EQ(r.method, baseline_name(k));
    EXPECT_GE(r.acc_newest, 0.0);
    EXPECT_LE(r.acc_newest, 1.0);
    EXPECT_EQ(r.historical_acc.size(), 3u);
  }
}

TEST(Baselines, SourceOnlyIsDeterministicAndIgnoresTargets) {
  const auto stream = gen_stream(small_stream(3, 30, 5));
  const L2ECfg cfg = small_l2e(5);
  const auto a = run_baseline({BaselineKind::source_only, cfg}, stream);
  auto shifted = stream;
  for (auto& t : shifted.targets) t.features.array() += 3.0;
  const auto b = run_baseline({BaselineKind::source_only, cfg}, shifted);
  EXPECT_TRUE(bitwise_equal(a.theta_final, b.theta_final));
}
