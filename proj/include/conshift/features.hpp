#pragma once

// Hashed bag-of-features text encoder for the stand-in classifier.
//
// Feature keys (hashed with salted_hash(key, salt) & (dim - 1)):
//   word n-grams     "w:" + tokens joined by ' '   (n-grams never cross a [SEP])
//   char trigrams    "c:" + trigram of "<token>"
//   cross features   prompt_token + "⊗" + content_token
//
// A text split by "[SEP]" into two segments is read as (prompt, content); three
// segments as (content, prompt, content). Values are counts scaled to unit L2
// norm.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "conshift/common.hpp"

namespace conshift {

inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kCrossMark = "\xE2\x8A\x97";  // U+2297

struct FeaturizerConfig {
  std::uint32_t dim = 1u << 18;
  int word_ngrams = 2;  // 0 disables, 1 unigrams, 2 unigrams + bigrams
  int char_ngrams = 3;  // 0 disables, otherwise trigrams
  bool cross_features = true;
  std::uint64_t hash_salt = 0;

  bool operator==(const FeaturizerConfig&) const = default;
};

inline void validate(const FeaturizerConfig& c) {
  if (c.dim == 0 || (c.dim & (c.dim - 1)) != 0) throw Error("featurizer dim must be a power of two");
  if (c.word_ngrams < 0 || c.word_ngrams > 2) throw Error("word_ngrams must be 0, 1 or 2");
  if (c.char_ngrams != 0 && c.char_ngrams != 3) throw Error("char_ngrams must be 0 or 3");
  if (c.word_ngrams == 0 && c.char_ngrams == 0 && !c.cross_features) {
    throw Error("featurizer needs at least one feature family enabled");
  }
}

inline nlohmann::json to_json(const FeaturizerConfig& c) {
  return {{"dim", c.dim},
          {"word_ngrams", c.word_ngrams},
          {"char_ngrams", c.char_ngrams},
          {"cross_features", c.cross_features},
          {"hash_salt", c.hash_salt}};
}

inline FeaturizerConfig featurizer_from_json(const nlohmann::json& j) {
  FeaturizerConfig c;
  c.dim = j.value("dim", c.dim);
  c.word_ngrams = j.value("word_ngrams", c.word_ngrams);
  c.char_ngrams = j.value("char_ngrams", c.char_ngrams);
  c.cross_features = j.value("cross_features", c.cross_features);
  c.hash_salt = j.value("hash_salt", c.hash_salt);
  validate(c);
  return c;
}

struct SparseVector {
  std::vector<std::uint32_t> index;  // strictly increasing
  std::vector<double> value;

  std::size_t nnz() const { return index.size(); }
  bool empty() const { return index.empty(); }

  bool operator==(const SparseVector&) const = default;
};

/// Lowercases ASCII and splits on whitespace and ASCII punctuation. Bytes
/// >= 0x80 are kept, so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool is_break = c < 0x80 && !std::isalnum(c);
    if (is_break) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c < 0x80 ? char(std::tolower(c)) : ch;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Splits on the literal "[SEP]" marker.
inline std::vector<std::string_view> split_segments(std::string_view text) {
  std::vector<std::string_view> seg;
  std::size_t pos = 0;
  for (;;) {
    const auto hit = text.find(kSep, pos);
    if (hit == std::string_view::npos) break;
    seg.push_back(text.substr(pos, hit - pos));
    pos = hit + kSep.size();
  }
  seg.push_back(text.substr(pos));
  return seg;
}

inline std::uint32_t feature_index(std::string_view key, const FeaturizerConfig& c) {
  return static_cast<std::uint32_t>(salted_hash(key, c.hash_salt) & (c.dim - 1));
}

inline SparseVector featurize(std::string_view text, const FeaturizerConfig& c) {
  const auto segments = split_segments(text);
  std::vector<std::vector<std::string>> seg_tokens;
  seg_tokens.reserve(segments.size());
  for (auto s : segments) seg_tokens.push_back(tokenize(s));

  std::vector<std::uint32_t> hits;
  std::string key;
  for (const auto& toks : seg_tokens) {
    if (c.word_ngrams >= 1) {
      for (const auto& t : toks) {
        key = "w:";
        key += t;
        hits.push_back(feature_index(key, c));
      }
    }
    if (c.word_ngrams >= 2) {
      for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
        key = "w:";
        key += toks[i];
        key += ' ';
        key += toks[i + 1];
        hits.push_back(feature_index(key, c));
      }
    }
    if (c.char_ngrams == 3) {
      for (const auto& t : toks) {
        const std::string padded = "<" + t + ">";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
          key = "c:";
          key.append(padded, i, 3);
          hits.push_back(feature_index(key, c));
        }
      }
    }
  }

  if (c.cross_features && seg_tokens.size() >= 2) {
    const std::size_t prompt_seg = seg_tokens.size() == 2 ? 0 : 1;
    const auto& prompt = seg_tokens[prompt_seg];
    for (std::size_t s = 0; s < seg_tokens.size(); ++s) {
      if (s == prompt_seg) continue;
      for (const auto& p : prompt) {
        for (const auto& t : seg_tokens[s]) {
          key = p;
          key += kCrossMark;
          key += t;
          hits.push_back(feature_index(key, c));
        }
      }
    }
  }

  SparseVector v;
  if (hits.empty()) return v;
  std::sort(hits.begin(), hits.end());
  for (std::size_t i = 0; i < hits.size();) {
    std::size_t j = i;
    while (j < hits.size() && hits[j] == hits[i]) ++j;
    v.index.push_back(hits[i]);
    v.value.push_back(double(j - i));
    i = j;
  }
  double norm = 0.0;
  for (double x : v.value) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v.value) x /= norm;
  return v;
}

}  // namespace conshift
