#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "conshift/eval_stats.hpp"

using namespace conshift;

namespace {

const LabelSet kBin({"relevant", "irrelevant"});
const LabelSet kEsci({"exact", "substitute", "complement", "irrelevant"});

ConfusionMatrix from_counts(const LabelSet& labels, const std::vector<std::vector<std::size_t>>& c) {
  ConfusionMatrix cm(labels);
  for (std::size_t g = 0; g < c.size(); ++g) {
    for (std::size_t p = 0; p < c[g].size(); ++p) cm.add(g, p, c[g][p]);
  }
  return cm;
}

// Oracle: U as the count of (a_i > b_j) pairs plus half the ties.
double pair_count_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return u;
}

// Oracle: exact p by recursive enumeration of every subset of pooled values
// assigned to the first sample, counting U by pairs.
double brute_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double mu = double(a.size()) * double(b.size()) / 2.0;
  const double obs = std::abs(pair_count_u(a, b) - mu);
  std::size_t hits = 0, total = 0;
  std::vector<bool> pick(pooled.size(), false);
  std::fill(pick.begin(), pick.begin() + std::ptrdiff_t(a.size()), true);
  std::sort(pick.begin(), pick.end());
  do {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < pooled.size(); ++i) (pick[i] ? x : y).push_back(pooled[i]);
    ++total;
    hits += std::abs(pair_count_u(x, y) - mu) >= obs - 1e-9;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return double(hits) / double(total);
}

std::vector<double> draw(Rng& rng, std::size_t n, int levels) {
  std::vector<double> v(n);
  for (double& x : v) x = double(rng.below(std::uint64_t(levels)));
  return v;
}

}  // namespace

TEST(MacroF1, PerfectPredictions) {
  EXPECT_DOUBLE_EQ(macro_f1(from_counts(kEsci, {{3, 0, 0, 0}, {0, 2, 0, 0}, {0, 0, 5, 0}, {0, 0, 0, 1}})), 1.0);
}

TEST(MacroF1, ConstantPredictorAnchors) {
  EXPECT_NEAR(100.0 * macro_f1(from_counts(kBin, {{50, 0}, {50, 0}})), 33.33, 0.01);
  EXPECT_NEAR(100.0 * macro_f1(from_counts(kEsci, {{25, 0, 0, 0}, {25, 0, 0, 0}, {25, 0, 0, 0}, {25, 0, 0, 0}})), 10.0,
              0.01);
}

TEST(MacroF1, HandBuiltTwoByTwo) {
  // Rows are gold, columns predicted: [[3,1],[2,4]].
  // Class 0: P = 3/5, R = 3/4, F1 = 2PR/(P+R) = 2/3.
  // Class 1: P = 4/5, R = 4/6, F1 = 8/11.
  const auto cm = from_counts(kBin, {{3, 1}, {2, 4}});
  const double p0 = 3.0 / 5.0, r0 = 3.0 / 4.0, p1 = 4.0 / 5.0, r1 = 4.0 / 6.0;
  const double f0 = 2 * p0 * r0 / (p0 + r0), f1 = 2 * p1 * r1 / (p1 + r1);
  const auto per = cm.per_class_f1();
  EXPECT_NEAR(per[0], f0, 1e-15);
  EXPECT_NEAR(per[1], f1, 1e-15);
  EXPECT_NEAR(macro_f1(cm), (f0 + f1) / 2.0, 1e-15);
  EXPECT_NEAR(macro_f1(cm), (2.0 / 3.0 + 8.0 / 11.0) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(cm.accuracy(), 0.7);
  EXPECT_EQ(cm.total(), 10u);
}

TEST(MacroF1, ZeroSupportCountsAsZero) {
  const auto cm = from_counts(kEsci, {{4, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  EXPECT_DOUBLE_EQ(macro_f1(cm), 0.25);
}

TEST(MacroF1, EmptyIsAnError) {
  EXPECT_THROW(macro_f1(ConfusionMatrix(kBin)), Error);
  EXPECT_THROW(ConfusionMatrix(kBin).add(2, 0), Error);
}

TEST(MacroF1, PermutationAndRelabelingInvariance) {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    std::vector<std::size_t> gold(40), pred(40);
    for (auto& g : gold) g = rng.below(4);
    for (auto& p : pred) p = rng.below(4);
    const ConfusionMatrix base(kEsci, gold, pred);
    auto order = rng.permutation(40);
    std::vector<std::size_t> g2, p2;
    for (auto i : order) {
      g2.push_back(gold[i]);
      p2.push_back(pred[i]);
    }
    EXPECT_DOUBLE_EQ(macro_f1(ConfusionMatrix(kEsci, g2, p2)), macro_f1(base));
    const auto perm = rng.permutation(4);
    std::vector<std::size_t> g3, p3;
    for (std::size_t i = 0; i < 40; ++i) {
      g3.push_back(perm[gold[i]]);
      p3.push_back(perm[pred[i]]);
    }
    const ConfusionMatrix relabeled(kEsci, g3, p3);
    EXPECT_NEAR(macro_f1(relabeled), macro_f1(base), 1e-15);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(relabeled.per_class_f1()[perm[k]], base.per_class_f1()[k]);
  }
}

TEST(RunScore, MacroIsMeanOfPerClass) {
  const auto r = make_run_score("entail", "10", 0, from_counts(kBin, {{3, 1}, {2, 4}}));
  EXPECT_NEAR(r.macro_f1, (r.per_class_f1[0] + r.per_class_f1[1]) / 2.0, 1e-15);
}

TEST(Aggregate, IdenticalScoresHaveZeroStd) {
  const std::vector<double> v(5, 0.1);
  const auto a = aggregate(v);
  EXPECT_DOUBLE_EQ(a.mean, 0.1);
  ASSERT_TRUE(a.std.has_value());
  EXPECT_EQ(*a.std, 0.0);
}

TEST(Aggregate, TwoPoints) {
  const auto a = aggregate(std::vector<double>{0.2, 0.4});
  EXPECT_NEAR(a.mean, 0.3, 1e-15);
  EXPECT_NEAR(*a.std, std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(*a.std, 0.1414, 1e-4);
}

TEST(Aggregate, MatchesTwoPassOracle) {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(2 + rng.below(20));
    for (double& x : v) x = rng.uniform();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / double(v.size() - 1));
    const auto a = aggregate(v);
    EXPECT_NEAR(a.mean, mean, 1e-12);
    EXPECT_NEAR(*a.std, sd, 1e-12);
    EXPECT_EQ(a.n, v.size());
  }
}

TEST(Aggregate, SingletonHasNoStd) {
  const auto a = aggregate(std::vector<double>{0.7});
  EXPECT_DOUBLE_EQ(a.mean, 0.7);
  EXPECT_FALSE(a.std.has_value());
  EXPECT_THROW(aggregate(std::vector<double>{}), Error);
}

TEST(Aggregate, GroupsSkipFailedRuns) {
  std::vector<RunScore> runs;
  for (int s = 0; s < 3; ++s) runs.push_back({"a", "10", std::size_t(s), 0.1 * s, {}, true, ""});
  runs.push_back({"a", "10", 3, 0.9, {}, false, "boom"});
  runs.push_back({"b", "full", 0, 0.5, {}, true, ""});
  const auto g = aggregate_groups(runs);
  EXPECT_EQ(g.at({"a", "10"}).n, 3u);
  EXPECT_NEAR(g.at({"a", "10"}).mean, 0.1, 1e-15);
  EXPECT_FALSE(g.at({"b", "full"}).std.has_value());
}

TEST(MannWhitney, SeparatedTriplesAnchor) {
  const std::vector<double> a = {1, 2, 3}, b = {4, 5, 6};
  const auto r = mann_whitney_u(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(r.u, 0.0);
  // Only the two extreme splits of C(6,3) = 20 are as far from 4.5 as U = 0.
  EXPECT_NEAR(r.p_two_sided, 2.0 / 20.0, 1e-15);
}

TEST(MannWhitney, IdenticalSamples) {
  const std::vector<double> a = {0.3, 0.5, 0.7, 0.9};
  EXPECT_DOUBLE_EQ(mann_whitney_u(a, a).p_two_sided, 1.0);
  const std::vector<double> c(8, 0.4);
  EXPECT_DOUBLE_EQ(mann_whitney_u(c, c).p_two_sided, 1.0);
  const std::vector<double> big(10, 0.4);
  const auto n = mann_whitney_u(big, big);
  EXPECT_FALSE(n.exact);
  EXPECT_DOUBLE_EQ(n.p_two_sided, 1.0);
}

TEST(MannWhitney, ExactMatchesBruteForceUpToTen) {
  Rng rng(99);
  for (std::size_t na = 1; na <= 9; ++na) {
    for (std::size_t nb = 1; na + nb <= 10; ++nb) {
      for (int rep = 0; rep < 4; ++rep) {
        const auto a = draw(rng, na, rep % 2 ? 4 : 1000);
        const auto b = draw(rng, nb, rep % 2 ? 4 : 1000);
        const auto r = mann_whitney_u_exact(a, b);
        EXPECT_NEAR(r.u, pair_count_u(a, b), 1e-12);
        EXPECT_NEAR(r.p_two_sided, brute_exact_p(a, b), 1e-12);
        const auto s = mann_whitney_u_exact(b, a);
        EXPECT_NEAR(r.u + s.u, double(na * nb), 1e-12);
        EXPECT_NEAR(r.p_two_sided, s.p_two_sided, 1e-12);
        EXPECT_GT(r.p_two_sided, 0.0);
        EXPECT_LE(r.p_two_sided, 1.0);
      }
    }
  }
}

TEST(MannWhitney, ExactAndNormalAgreeOnSixAndSix) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(6), b(6);
    for (double& x : a) x = rng.uniform();
    for (double& x : b) x = rng.uniform() + 0.3 * double(t % 3);
    const auto e = mann_whitney_u_exact(a, b);
    const auto n = mann_whitney_u_normal(a, b);
    EXPECT_DOUBLE_EQ(e.u, n.u);
    EXPECT_NEAR(e.p_two_sided, n.p_two_sided, 0.02) << "trial " << t;
  }
}

TEST(MannWhitney, NormalBranchProperties) {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    const auto a = draw(rng, 8 + rng.below(10), 5);
    const auto b = draw(rng, 8 + rng.below(10), 5);
    const auto r = mann_whitney_u(a, b);
    const auto s = mann_whitney_u(b, a);
    EXPECT_FALSE(r.exact);
    EXPECT_NEAR(r.u, pair_count_u(a, b), 1e-9);
    EXPECT_NEAR(r.u + s.u, double(a.size() * b.size()), 1e-9);
    EXPECT_NEAR(r.p_two_sided, s.p_two_sided, 1e-12);
    EXPECT_GT(r.p_two_sided, 0.0);
    EXPECT_LE(r.p_two_sided, 1.0);
  }
}

TEST(MannWhitney, FiveVersusFiveMinimumP) {
  const std::vector<double> a = {0.9, 0.91, 0.92, 0.93, 0.94}, b = {0.1, 0.2, 0.3, 0.4, 0.5};
  EXPECT_NEAR(mann_whitney_u(a, b).p_two_sided, 2.0 / 252.0, 1e-15);
}

TEST(MannWhitney, InputValidation) {
  EXPECT_THROW(mann_whitney_u(std::vector<double>{}, std::vector<double>{1.0}), Error);
  EXPECT_THROW(mann_whitney_u(std::vector<double>{NAN}, std::vector<double>{1.0}), Error);
}
