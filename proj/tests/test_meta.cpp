#include <gtest/gtest.h>

#include "support.hpp"

using namespace l2e;
using namespace l2e::testing;

TEST(Meta, PairCardinalityAndWiring) {
  for (int N = 2; N <= 10; ++N) {
    const auto stream = gen_stream(small_stream(N, 20, static_cast<std::uint64_t>(N)));
    L2ECfg cfg = small_l2e();
    cfg.val_count = 5;
    const auto pairs = build_meta_pairs(stream, cfg);
    ASSERT_EQ(pairs.size(), static_cast<std::size_t>(2 * N));
    int training = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      EXPECT_EQ(p.k, 1 - N + static_cast<int>(i));
      training += p.k <= N - 1;
      if (p.k < 0) {
        const int j = -p.k;
        EXPECT_EQ(p.div_a->role, Role::source);
        EXPECT_EQ(p.div_a->time_index, j);
        EXPECT_EQ(p.div_b->time_index, j + 1);
        EXPECT_EQ(p.cls->role, Role::source);
        EXPECT_EQ(p.cls->time_index, j + 1);
        EXPECT_EQ(p.pseudo_target, 0);
      } else if (p.k == 0) {
        EXPECT_EQ(p.cls->role, Role::source);
        EXPECT_EQ(p.cls->time_index, 1);
        EXPECT_EQ(p.div_a->role, Role::source);
        EXPECT_EQ(p.div_b->role, Role::target);
        EXPECT_EQ(p.div_b->time_index, 1);
      } else {
        EXPECT_EQ(p.cls->role, Role::target);
        EXPECT_EQ(p.cls->time_index, p.k);
        EXPECT_EQ(p.pseudo_target, p.k);
        EXPECT_EQ(p.div_a->time_index, p.k);
        EXPECT_EQ(p.div_b->role, Role::target);
        EXPECT_EQ(p.div_b->time_index, p.k + 1);
        EXPECT_FALSE(p.cls->eval_labels.has_value());
      }
      EXPECT_EQ(p.split.train.size() + p.split.val.size(), p.cls->rows());
    }
    EXPECT_EQ(training, 2 * N - 1);
  }
}

// With a zero inner rate FO-MAML reduces to joint gradient descent on the
// summed validation losses; the oracle rebuilds those batches by hand.
TEST(Meta, ZeroInnerRateCollapsesToJointTraining) {
  const auto stream = gen_stream(small_stream(3, 40, 5));
  L2ECfg cfg = small_l2e(5);
  cfg.inner_lr = 0.0;
  cfg.outer_epochs = 5;
  cfg.outer_lr = 0.1;
  const auto pairs = build_meta_pairs(stream, cfg);
  const auto init = init_params(cfg.arch_for(stream), 17);
  const auto meta = meta_train(pairs, 0, init, cfg);

  ModelParams theta = init;
  for (int e = 0; e < 5; ++e) {
    GradVector total = GradVector::zeros_like(theta);
    for (const auto& p : pairs) {
      if (p.k > 0) continue;
      Batch b{take_rows(p.cls->features, p.split.val), take(*p.cls->labels, p.split.val), std::nullopt};
      total += loss_and_grad(theta, b, DivPair{p.div_a->features, p.div_b->features}, cfg.gamma,
                             KernelCfg::fixed(p.bandwidth));
    }
    theta = sgd_step(theta, total, cfg.outer_lr);
  }
  EXPECT_LT((meta.flatten() - theta.flatten()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Meta, PseudoSelectionContracts) {
  for (int t = 0; t < 100; ++t) {
    Rng rng(derive_seed(41, "pseudo", t));
    StreamCfg sc = small_stream(2, uniform_int(rng, 12, 40), static_cast<std::uint64_t>(t));
    auto stream = gen_stream(sc);
    // Duplicate rows create exact entropy ties.
    auto& X = stream.targets[1].features;
    for (int d = 0; d < 3; ++d) X.row(uniform_int(rng, 0, static_cast<int>(X.rows()) - 1)) = X.row(0);
    L2ECfg cfg = small_l2e(static_cast<std::uint64_t>(t));
    cfg.val_count = 4;
    cfg.p_percent = uniform(rng, 1.0, 100.0);
    auto pairs = build_meta_pairs(stream, cfg);
    const auto theta = init_params(cfg.arch_for(stream), static_cast<std::uint64_t>(t));
    pseudo_label(stream.training_view(), pairs, 1, theta, cfg);
    const auto set = pseudo_label(stream.training_view(), pairs, 2, theta, cfg);

    const std::size_t m = set.labels.size();
    const auto expected = static_cast<std::size_t>(std::ceil(cfg.p_percent * static_cast<double>(m) / 100.0 - 1e-9));
    EXPECT_EQ(set.selected_count(), expected);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) {
        if (!set.selected[a] || set.selected[b]) continue;
        const double ea = set.entropies(static_cast<Eigen::Index>(a)), eb = set.entropies(static_cast<Eigen::Index>(b));
        EXPECT_LE(ea, eb);
        if (ea == eb) EXPECT_LT(a, b);
      }
    // Every pair classifying target 2 received the same set.
    for (const auto& p : pairs)
      if (p.pseudo_target == 2) EXPECT_EQ(p.pseudo->labels, set.labels);
  }
}

TEST(Meta, PseudoLabelingRejectsLeakedTraining) {
  const auto stream = gen_stream(small_stream(3, 30, 1));
  const L2ECfg cfg = small_l2e();
  auto pairs = build_meta_pairs(stream, cfg);
  const auto theta = init_params(cfg.arch_for(stream), 1);
  pseudo_label(stream.training_view(), pairs, 1, theta, cfg);
  EXPECT_THROW(pseudo_label(stream.training_view(), pairs, 2, theta, cfg, {{1, true}}), StateError);
  EXPECT_NO_THROW(pseudo_label(stream.training_view(), pairs, 2, theta, cfg, {{0, false}}));
}

TEST(Meta, UnresolvedPairsCannotBeTrained) {
  const auto stream = gen_stream(small_stream(3, 30, 1));
  const L2ECfg cfg = small_l2e();
  const auto pairs = build_meta_pairs(stream, cfg);
  const auto theta = init_params(cfg.arch_for(stream), 1);
  EXPECT_THROW(meta_train(pairs, 1, theta, cfg), StateError);
  EXPECT_THROW(meta_test(theta, pairs.back(), cfg), StateError);
  EXPECT_NO_THROW(meta_train(pairs, 0, theta, cfg));
}

TEST(Meta, RunIsDeterministicAndIgnoresEvalLabelsWhileTraining) {
  const auto stream = gen_stream(small_stream(3, 30, 2));
  const L2ECfg cfg = small_l2e(2);
  const auto a = run_l2e(stream, cfg);
  const auto b = run_l2e(stream, cfg);
  EXPECT_TRUE(bitwise_equal(a.theta_final, b.theta_final));
  EXPECT_EQ(a.acc_newest, b.acc_newest);

  auto scrambled = stream;
  for (auto& t : scrambled.targets)
    for (auto& y : *t.eval_labels) y = 1 - y;
  const auto c = run_l2e(scrambled, cfg);
  EXPECT_TRUE(bitwise_equal(a.theta_final, c.theta_final));
  EXPECT_NEAR(c.acc_newest, 1.0 - a.acc_newest, 1e-12);
}

TEST(Meta, RunReportsEveryTarget) {
  const auto stream = gen_stream(small_stream(3, 30, 3));
  const auto r = run_l2e(stream, small_l2e(3));
  EXPECT_EQ(r.historical_acc.size(), 3u);
  EXPECT_EQ(r.pseudo_label_acc.size(), 3u);
  EXPECT_EQ(r.pairs.size(), 6u);
  double mean = 0.0;
  for (double v : r.historical_acc) mean += v / 3.0;
  EXPECT_NEAR(r.h_acc, mean, 1e-12);
  for (double v : r.pseudo_label_acc) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Meta, GradientBudgetFormula) {
  L2ECfg cfg;
  cfg.outer_epochs = 1;
  cfg.inner_steps = 1;
  // Stages see 1 and 2 pairs, the final stage 3, at 2 evaluations each,
  // plus one inner step per pseudo-labeling stage and one for meta-testing.
  EXPECT_EQ(l2e_gradient_budget(2, cfg), 2 * (1 + 2 + 3) + 3);
}

TEST(Meta, HandBuiltPairLossIsCrossEntropyPlusScaledMmd) {
  auto snap = [](std::initializer_list<double> xs, Role role, int t) {
    auto s = std::make_shared<TaskSnapshot>();
    s->features = Matrix(static_cast<Eigen::Index>(xs.size() / 2), 2);
    Eigen::Index i = 0;
    for (double v : xs) s->features(i / 2, i % 2) = v, ++i;
    s->role = role;
    s->time_index = t;
    return s;
  };
  auto cls = snap({0.0, 1.0, 1.0, 0.5, -1.0, 0.2, 0.3, -0.7}, Role::source, 2);
  cls->labels = Labels{0, 1, 1, 0};
  auto a = snap({0.1, 0.2, -0.3, 0.4, 0.9, -0.5}, Role::source, 1);
  auto b = snap({1.1, 0.0, 0.6, 0.8, -0.2, 1.3}, Role::source, 2);
  L2ECfg cfg;
  cfg.val_count = 1;
  cfg.gamma = 0.3;
  cfg.hidden_dims = {3};
  cfg.embed_dim = 2;
  const auto pair = make_meta_pair(-1, cls, 0, a, b, cfg);
  const auto params = init_params(Arch{2, {3}, 2, 2}, 8);

  const double ce = ce_loss(forward(params, cls->features).probs, *cls->labels);
  const double mmd = mmd2_biased(embed(params, a->features), embed(params, b->features),
                                 KernelCfg::fixed(pair.bandwidth)).value;
  EXPECT_NEAR(zeta(params, pair, Split::all, cfg).loss, ce + 0.3 * mmd, 1e-12);
}

TEST(Meta, OneInnerStepIsOneGradientStep) {
  const auto stream = gen_stream(small_stream(3, 30, 4));
  L2ECfg cfg = small_l2e(4);
  cfg.inner_steps = 1;
  cfg.inner_lr = 0.37;
  const auto pairs = build_meta_pairs(stream, cfg);
  const auto theta = init_params(cfg.arch_for(stream), 4);
  const auto& pair = pairs.front();
  const auto expected = sgd_step(theta, zeta(theta, pair, Split::train, cfg), 0.37);
  EXPECT_TRUE(bitwise_equal(inner_adapt(theta, pair, cfg), expected));
  cfg.inner_lr = 0.0;
  EXPECT_TRUE(bitwise_equal(inner_adapt(theta, pair, cfg), theta));
}

TEST(Meta, SmallRateMetaTestDoesNotIncreaseTheNewestPairLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto stream = gen_stream(small_stream(3, 30, seed));
    L2ECfg cfg = small_l2e(seed);
    auto pairs = build_meta_pairs(stream, cfg);
    const auto theta = init_params(cfg.arch_for(stream), seed);
    for (int j = 1; j <= 3; ++j) pseudo_label(stream.training_view(), pairs, j, theta, cfg);
    const auto& newest = *find_chain_pair(pairs, 3);
    cfg.inner_lr = 1e-4;
    const auto adapted = meta_test(theta, newest, cfg);
    EXPECT_LE(zeta(adapted, newest, Split::all, cfg).loss, zeta(theta, newest, Split::all, cfg).loss) << "seed " << seed;
  }
}
