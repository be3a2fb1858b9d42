#include <set>

#include <gtest/gtest.h>

#include "conshift/baselines.hpp"
#include "test_util.hpp"

using namespace conshift;
using testutil::TempDir;

namespace {

struct NewsData {
  Dataset train, test;
};

const NewsData& news() {
  static const NewsData d = [] {
    auto all = synth_generate(news_shift_config(150, 0.0), 5);
    auto [train, test] = split(all, 0.25, 1);
    return NewsData{train, rebalance(test, 1)};
  }();
  return d;
}

MethodSpec spec_of(MethodKind k) {
  MethodSpec s;
  s.kind = k;
  s.train.epochs = 10;
  s.pre_train.epochs = 10;
  return s;
}

double mf1(const Dataset& test, const Predictions& p) { return macro_f1(confusion(test, p)); }

}  // namespace

TEST(MethodKind, NamesRoundTrip) {
  for (auto k : {MethodKind::majority, MethodKind::pre_shift_only, MethodKind::finetuned,
                 MethodKind::finetuned_post_only, MethodKind::l1l2, MethodKind::entail}) {
    EXPECT_EQ(method_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(method_kind_from_string("bert"), Error);
}

TEST(MethodSpec, JsonRoundTrip) {
  MethodSpec s = spec_of(MethodKind::entail);
  s.id = "entail-rand";
  s.prompt_variant = PromptVariant::random;
  s.mode = ConcatMode::two_segment;
  s.oversample = true;
  s.catalog = "en-retail";
  const auto back = method_spec_from_json(to_json(s));
  EXPECT_EQ(back.name(), "entail-rand");
  EXPECT_EQ(back.prompt_variant, PromptVariant::random);
  EXPECT_EQ(back.mode, ConcatMode::two_segment);
  EXPECT_TRUE(back.oversample);
  EXPECT_EQ(back.catalog, "en-retail");
  EXPECT_EQ(back.train, s.train);
  EXPECT_THROW(method_spec_from_json({{"kind", "entail"}, {"prompt_variant", "odd"}}), Error);
}

TEST(Majority, BalancedBinaryAnchor) {
  const auto& d = news();
  const auto p = run_method(spec_of(MethodKind::majority), d.train, d.train, d.test, 0);
  EXPECT_NEAR(100.0 * mf1(d.test, p), 33.33, 0.01);
  for (auto l : p.labels) EXPECT_EQ(d.test.post_labels[l], "relevant");  // 3:1 in train
}

TEST(Majority, BalancedFourClassAnchor) {
  const auto d = testutil::balanced({"exact", "substitute", "complement", "irrelevant"}, 25);
  const auto p = run_method(spec_of(MethodKind::majority), d, d, d, 0);
  EXPECT_NEAR(100.0 * mf1(d, p), 10.0, 0.01);
  for (auto l : p.labels) EXPECT_EQ(l, 0u);  // all tied, lowest index wins
}

TEST(Majority, UsesPostTrainNotTest) {
  auto d = testutil::balanced({"a", "b"}, 10);
  auto train = d.with_examples({d.examples[1], d.examples[3], d.examples[0]});  // two b, one a
  const auto p = run_method(spec_of(MethodKind::majority), train, train, d, 0);
  for (auto l : p.labels) EXPECT_EQ(l, 1u);
}

TEST(Methods, OnePredictionPerTestIdInLabelSet) {
  const auto& d = news();
  const auto post = fewshot_sample(d.train, 40, 1);
  for (auto k : {MethodKind::majority, MethodKind::pre_shift_only, MethodKind::finetuned,
                 MethodKind::finetuned_post_only, MethodKind::l1l2, MethodKind::entail}) {
    const auto p = run_method(spec_of(k), d.train, post, d.test, 3);
    ASSERT_EQ(p.ids.size(), d.test.size()) << to_string(k);
    EXPECT_EQ(p.ids, testutil::ids(d.test));
    for (auto l : p.labels) EXPECT_LT(l, d.test.post_labels.size());
  }
}

TEST(Methods, DeterministicGivenSeed) {
  const auto& d = news();
  const auto post = fewshot_sample(d.train, 20, 2);
  for (auto k : {MethodKind::finetuned, MethodKind::l1l2, MethodKind::entail}) {
    auto spec = spec_of(k);
    const auto a = run_method(spec, d.train, post, d.test, 11);
    const auto b = run_method(spec, d.train, post, d.test, 11);
    EXPECT_EQ(a.labels, b.labels) << to_string(k);
  }
}

TEST(Methods, EmptyPostTrainIsAnError) {
  const auto& d = news();
  const auto empty = d.train.with_examples({});
  EXPECT_THROW(run_method(spec_of(MethodKind::finetuned), d.train, empty, d.test, 0), Error);
  EXPECT_THROW(run_method(spec_of(MethodKind::majority), d.train, empty, d.test, 0), Error);
  EXPECT_THROW(run_method(spec_of(MethodKind::entail), d.train, empty, d.test, 0), Error);
  EXPECT_NO_THROW(run_method(spec_of(MethodKind::pre_shift_only), d.train, empty, d.test, 0));
}

TEST(Finetuned, ZeroPreEpochsReducesToPostOnly) {
  const auto& d = news();
  const auto post = fewshot_sample(d.train, 60, 4);
  auto ft = spec_of(MethodKind::finetuned);
  ft.pre_train.epochs = 0;
  auto po = spec_of(MethodKind::finetuned_post_only);
  const auto a = run_method(ft, d.train, post, d.test, 8);
  const auto b = run_method(po, d.train, post, d.test, 8);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(PreShiftOnly, FlipCollapsesMirroringPreShiftAccuracy) {
  auto all = synth_generate(flip_shift_config(150, 0.0), 2);
  auto [train, test] = split(all, 0.25, 3);
  test = rebalance(test, 3);
  const auto spec = spec_of(MethodKind::pre_shift_only);
  const auto p = run_method(spec, train, train, test, 0);
  // Oracle: accuracy on the pre-shift labels of the same test items.
  std::size_t pre_hits = 0, post_hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& e = test.examples[i];
    pre_hits += test.post_labels[p.labels[i]] == e.pre_label;
    post_hits += test.post_labels[p.labels[i]] == e.post_label;
  }
  const double pre_acc = double(pre_hits) / double(test.size());
  const double post_acc = double(post_hits) / double(test.size());
  EXPECT_GT(pre_acc, 0.95);
  EXPECT_NEAR(post_acc, 1.0 - pre_acc, 1e-12);
  EXPECT_LT(mf1(test, p), 0.05);
}

TEST(L1L2, RetailStyleUsesBothTargets) {
  // Every pre label is "irrelevant", so L1+L2 keeps pulling towards it.
  auto d = synth_generate(news_shift_config(60, 0.0), 9);
  for (auto& e : d.examples) e.pre_label = "irrelevant";
  const auto spec = spec_of(MethodKind::l1l2);
  const auto p = run_method(spec, d, d, d, 0);
  EXPECT_EQ(p.ids.size(), d.size());
  Dataset bad = d;
  bad.pre_labels = LabelSet({"irrelevant", "unknown"});
  for (auto& e : bad.examples) e.pre_label = "unknown";
  EXPECT_THROW(run_method(spec, bad, bad, bad, 0), Error);
}

TEST(Entail, BeatsFinetunedAtTenShots) {
  const auto& d = news();
  double entail = 0.0, ft = 0.0;
  for (std::size_t seed = 0; seed < 5; ++seed) {
    const auto post = fewshot_sample(d.train, 10, derive_seed(1, "fewshot", std::to_string(seed)));
    entail += mf1(d.test, run_method(MethodSpec{}, d.train, post, d.test, seed));
    MethodSpec f;
    f.kind = MethodKind::finetuned;
    ft += mf1(d.test, run_method(f, d.train, post, d.test, seed));
  }
  EXPECT_GT(entail / 5.0, ft / 5.0);
}

TEST(Entail, RandomVariantUsesDecoys) {
  MethodSpec s;
  s.prompt_variant = PromptVariant::random;
  const auto c = resolve_catalog(s, LabelSet({"relevant", "irrelevant"}), 0);
  EXPECT_EQ(render_prompt("relevant", "irrelevant", c), "changed to lion news");
  s.decoys = {"zebra", "dog"};
  EXPECT_EQ(render_prompt("relevant", "relevant", resolve_catalog(s, LabelSet({"relevant", "irrelevant"}), 0)),
            "remained zebra news");
}

TEST(Predictions, FileRoundTripAlignsById) {
  TempDir tmp;
  const auto& d = news();
  const auto p = run_method(spec_of(MethodKind::majority), d.train, d.train, d.test, 0);
  save_predictions(tmp / "p.jsonl", p, d.test.post_labels);
  EXPECT_EQ(testutil::count_lines(tmp / "p.jsonl"), d.test.size());
  Dataset reordered = d.test;
  std::reverse(reordered.examples.begin(), reordered.examples.end());
  const auto back = load_predictions(tmp / "p.jsonl", reordered);
  EXPECT_EQ(back.ids, testutil::ids(reordered));
  Dataset extra = d.test;
  extra.examples.push_back(extra.examples[0]);
  extra.examples.back().id = "missing";
  EXPECT_THROW(load_predictions(tmp / "p.jsonl", extra), Error);
}
