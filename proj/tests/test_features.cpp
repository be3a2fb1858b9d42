#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "conshift/features.hpp"

using namespace conshift;

namespace {

// Independent reimplementation of the key hash: FNV-1a 64 then the
// splitmix64 finalizer on (hash ^ salt), masked to the dimension.
std::uint32_t ref_index(const std::string& key, std::uint64_t salt, std::uint32_t dim) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = (h ^ salt) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return std::uint32_t(z & (dim - 1));
}

double value_at(const SparseVector& v, std::uint32_t idx) {
  const auto it = std::lower_bound(v.index.begin(), v.index.end(), idx);
  return it != v.index.end() && *it == idx ? v.value[std::size_t(it - v.index.begin())] : 0.0;
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(tokenize("Stocks, to WATCH: Tuesday!"), (std::vector<std::string>{"stocks", "to", "watch", "tuesday"}));
  EXPECT_EQ(tokenize("permaneció"), (std::vector<std::string>{"permaneció"}));
  EXPECT_TRUE(tokenize(" .,; ").empty());
}

TEST(Featurize, EmptyTextIsZeroVector) {
  EXPECT_TRUE(featurize("", FeaturizerConfig{}).empty());
  EXPECT_TRUE(featurize("  [SEP]  ", FeaturizerConfig{}).empty());
}

TEST(Featurize, Deterministic) {
  FeaturizerConfig c;
  c.hash_salt = 17;
  EXPECT_EQ(featurize("changed to relevant news [SEP] stocks rally", c),
            featurize("changed to relevant news [SEP] stocks rally", c));
}

TEST(Featurize, CrossFeatureIndexMatchesReferenceHash) {
  for (std::uint64_t salt : {0ULL, 99ULL}) {
    FeaturizerConfig c;
    c.hash_salt = salt;
    const auto v = featurize("changed to relevant news [SEP] stocks rally", c);
    const auto idx = ref_index("relevant\xE2\x8A\x97stocks", salt, c.dim);
    EXPECT_EQ(feature_index("relevant\xE2\x8A\x97stocks", c), idx);
    EXPECT_GT(value_at(v, idx), 0.0);
  }
  FeaturizerConfig off;
  off.cross_features = false;
  off.dim = 1u << 20;
  const auto v = featurize("changed to relevant news [SEP] stocks rally", off);
  EXPECT_EQ(value_at(v, ref_index("relevant\xE2\x8A\x97stocks", 0, off.dim)), 0.0);
}

TEST(Featurize, MatchesHandBuiltCountVector) {
  FeaturizerConfig c;
  c.dim = 1u << 22;
  const std::string text = "remained cat [SEP] ab ab";
  std::map<std::uint32_t, double> counts;
  auto add = [&](const std::string& k) { counts[ref_index(k, 0, c.dim)] += 1.0; };
  for (const char* k : {"w:remained", "w:cat", "w:remained cat", "w:ab", "w:ab", "w:ab ab"}) add(k);
  for (const char* k : {"c:<re", "c:rem", "c:ema", "c:mai", "c:ain", "c:ine", "c:ned", "c:ed>", "c:<ca", "c:cat",
                        "c:at>", "c:<ab", "c:ab>", "c:<ab", "c:ab>"}) {
    add(k);
  }
  for (const char* p : {"remained", "cat"}) {
    for (int i = 0; i < 2; ++i) add(std::string(p) + "\xE2\x8A\x97" + "ab");
  }
  double norm = 0.0;
  for (const auto& [i, v] : counts) norm += v * v;
  norm = std::sqrt(norm);
  const auto v = featurize(text, c);
  ASSERT_EQ(v.nnz(), counts.size());
  std::size_t j = 0;
  for (const auto& [i, cnt] : counts) {
    EXPECT_EQ(v.index[j], i);
    EXPECT_NEAR(v.value[j], cnt / norm, 1e-15);
    ++j;
  }
}

TEST(Featurize, BigramsDoNotCrossSeparator) {
  FeaturizerConfig c;
  c.dim = 1u << 22;
  c.char_ngrams = 0;
  c.cross_features = false;
  const auto v = featurize("alpha [SEP] beta", c);
  EXPECT_EQ(v.nnz(), 2u);
  EXPECT_EQ(value_at(v, ref_index("w:alpha beta", 0, c.dim)), 0.0);
}

TEST(Featurize, ThreeSegmentsTakeMiddleAsPrompt) {
  FeaturizerConfig c;
  c.dim = 1u << 22;
  const auto v = featurize("iphone [SEP] changed to substitute match [SEP] galaxy", c);
  EXPECT_GT(value_at(v, ref_index("substitute\xE2\x8A\x97iphone", 0, c.dim)), 0.0);
  EXPECT_GT(value_at(v, ref_index("substitute\xE2\x8A\x97galaxy", 0, c.dim)), 0.0);
  EXPECT_EQ(value_at(v, ref_index("iphone\xE2\x8A\x97galaxy", 0, c.dim)), 0.0);
}

TEST(Featurize, UnitNormAndSortedIndices) {
  const auto v = featurize("Some longer text with repeated repeated words [SEP] and a second segment", FeaturizerConfig{});
  double n = 0.0;
  for (double x : v.value) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_TRUE(std::is_sorted(v.index.begin(), v.index.end()));
  EXPECT_EQ(std::adjacent_find(v.index.begin(), v.index.end()), v.index.end());
}

TEST(FeaturizerConfig, Validation) {
  FeaturizerConfig c;
  c.dim = 1000;
  EXPECT_THROW(validate(c), Error);
  c = {};
  c.word_ngrams = 0;
  c.char_ngrams = 0;
  c.cross_features = false;
  EXPECT_THROW(validate(c), Error);
  c = {};
  c.word_ngrams = 3;
  EXPECT_THROW(validate(c), Error);
  c = {};
  c.hash_salt = 5;
  EXPECT_EQ(featurizer_from_json(to_json(c)), c);
}
