#pragma once

// Entailment-style reformulation. Each example with pre-shift label L_j and
// post-shift label L_j' becomes K binary samples, one per candidate L_k:
//
//     input  = concat(prompt(L_j, L_k), example)
//     target = 1 if k == j' else 0
//
// and the K-way prediction is the candidate with the highest binary score.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conshift/common.hpp"
#include "conshift/corpus.hpp"
#include "conshift/features.hpp"
#include "conshift/prompt_catalog.hpp"

namespace conshift {

enum class ConcatMode { single_segment, two_segment };

inline ConcatMode concat_mode_from_string(std::string_view s) {
  if (s == "single" || s == "single_segment") return ConcatMode::single_segment;
  if (s == "two" || s == "two_segment") return ConcatMode::two_segment;
  throw Error("unknown concat mode '" + std::string(s) + "' (expected single or two)");
}

inline const char* to_string(ConcatMode m) { return m == ConcatMode::single_segment ? "single" : "two"; }

struct EntailSample {
  std::string source_id;
  std::size_t candidate_index = 0;  // 0-based; files store it 1-based
  std::string input_text;
  int binary_label = 0;
  bool is_oversampled = false;

  bool operator==(const EntailSample&) const = default;
};

struct AugmentedDataset {
  std::vector<EntailSample> samples;
  LabelSet label_set;
  std::string catalog_id;
  ConcatMode mode = ConcatMode::single_segment;
};

/// "text_a [SEP] prompt [SEP] text_b" or "prompt [SEP] text_a".
inline std::string concat(std::string_view prompt, const Example& e, ConcatMode mode) {
  std::string out;
  if (mode == ConcatMode::two_segment) {
    if (!e.text_b) throw Error("example '" + e.id + "' has no text_b; two-segment concatenation needs one");
    out.reserve(e.text_a.size() + prompt.size() + e.text_b->size() + 14);
    out += e.text_a;
    out += " [SEP] ";
    out += prompt;
    out += " [SEP] ";
    out += *e.text_b;
  } else {
    out.reserve(prompt.size() + e.text_a.size() + 7);
    out += prompt;
    out += " [SEP] ";
    out += e.text_a;
  }
  return out;
}

/// The K inputs prompt(L_k) + x, in label order.
inline std::vector<std::string> candidate_inputs(const Example& e, const LabelSet& labels,
                                                 const PromptCatalog& catalog, ConcatMode mode) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& cand : labels.names()) out.push_back(concat(render_prompt(e.pre_label, cand, catalog), e, mode));
  return out;
}

inline std::vector<EntailSample> augment_example(const Example& e, const LabelSet& labels,
                                                 const PromptCatalog& catalog, ConcatMode mode) {
  const std::size_t positive = labels.index_of(e.post_label);
  auto inputs = candidate_inputs(e, labels, catalog, mode);
  std::vector<EntailSample> out;
  out.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    out.push_back({e.id, k, std::move(inputs[k]), k == positive ? 1 : 0, false});
  }
  return out;
}

/// Extra positive built by deleting one contiguous span of
/// max(1, round(deletion_frac * n)) whitespace tokens from text_b (two-segment
/// mode) or text_a, at a seeded uniform start. Texts of one token are left as
/// they are.
inline EntailSample oversample_positive(const EntailSample& sample, const Example& source, ConcatMode mode,
                                        double deletion_frac, std::uint64_t seed) {
  if (sample.binary_label != 1) throw Error("only positive samples can be oversampled");
  if (!(deletion_frac > 0.0 && deletion_frac < 1.0)) throw Error("deletion fraction must lie in (0, 1)");
  EntailSample out = sample;
  out.is_oversampled = true;

  const bool edit_b = mode == ConcatMode::two_segment && source.text_b.has_value();
  const std::string& target = edit_b ? *source.text_b : source.text_a;
  auto tokens = split_whitespace(target);
  if (tokens.size() <= 1) return out;

  const std::size_t n = tokens.size();
  std::size_t span = std::size_t(std::llround(deletion_frac * double(n)));
  span = std::clamp<std::size_t>(span, 1, n - 1);
  Rng rng(derive_seed(seed, "span-deletion", sample.source_id));
  const std::size_t start = rng.below(n - span + 1);
  tokens.erase(tokens.begin() + std::ptrdiff_t(start), tokens.begin() + std::ptrdiff_t(start + span));

  Example edited = source;
  (edit_b ? *edited.text_b : edited.text_a) = join(tokens, " ");
  const auto segments = split_segments(sample.input_text);
  const std::size_t prompt_seg = mode == ConcatMode::two_segment ? 1 : 0;
  if (segments.size() <= prompt_seg) throw Error("sample input does not match the concat mode");
  std::string_view prompt = segments[prompt_seg];
  while (!prompt.empty() && prompt.front() == ' ') prompt.remove_prefix(1);
  while (!prompt.empty() && prompt.back() == ' ') prompt.remove_suffix(1);
  out.input_text = concat(prompt, edited, mode);
  return out;
}

inline constexpr double kDefaultDeletionFrac = 0.05;

/// K samples per example (plus one span-deleted positive each when
/// `oversample` is set), grouped by source example in dataset order.
inline AugmentedDataset augment_dataset(const Dataset& d, const PromptCatalog& catalog, ConcatMode mode,
                                        bool oversample, std::uint64_t seed,
                                        double deletion_frac = kDefaultDeletionFrac) {
  if (d.empty()) throw Error("cannot augment an empty dataset");
  check_covers(catalog, d.post_labels);
  AugmentedDataset aug;
  aug.label_set = d.post_labels;
  aug.catalog_id = catalog.id;
  aug.mode = mode;
  aug.samples.reserve(d.size() * (d.post_labels.size() + (oversample ? 1 : 0)));
  for (const auto& e : d.examples) {
    auto group = augment_example(e, d.post_labels, catalog, mode);
    const std::size_t pos = d.post_labels.index_of(e.post_label);
    std::optional<EntailSample> extra;
    if (oversample) extra = oversample_positive(group[pos], e, mode, deletion_frac, seed);
    for (auto& s : group) aug.samples.push_back(std::move(s));
    if (extra) aug.samples.push_back(std::move(*extra));
  }
  return aug;
}

/// Argmax over the K candidate scores; ties go to the lowest label index.
/// `scorer(std::string_view input)` must return a probability in [0, 1].
template <typename Scorer>
std::size_t predict_label_index(Scorer&& scorer, const Example& e, const LabelSet& labels,
                                const PromptCatalog& catalog, ConcatMode mode) {
  const auto inputs = candidate_inputs(e, labels, catalog, mode);
  std::size_t best = 0;
  double best_p = -1.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const double p = scorer(std::string_view(inputs[k]));
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error("scorer returned " + std::to_string(p) + " for '" + inputs[k] + "'; expected a value in [0, 1]");
    }
    if (p > best_p) {
      best_p = p;
      best = k;
    }
  }
  return best;
}

template <typename Scorer>
std::string predict_label(Scorer&& scorer, const Example& e, const LabelSet& labels, const PromptCatalog& catalog,
                          ConcatMode mode) {
  return labels[predict_label_index(std::forward<Scorer>(scorer), e, labels, catalog, mode)];
}

// ---------------------------------------------------------------------------
// File bridge for external scorers

inline void export_augmented(const AugmentedDataset& aug, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write augmented samples: " + path.string());
  for (const auto& s : aug.samples) {
    nlohmann::json j{{"source_id", s.source_id},
                     {"candidate_index", s.candidate_index + 1},
                     {"input_text", s.input_text},
                     {"binary_label", s.binary_label},
                     {"is_oversampled", s.is_oversampled}};
    out << j.dump() << '\n';
  }
}

inline std::vector<EntailSample> read_augmented(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open augmented samples: " + path.string());
  std::vector<EntailSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto k = j.at("candidate_index").get<std::size_t>();
      if (k < 1) throw Error("candidate_index is 1-based");
      out.push_back({j.at("source_id").get<std::string>(), k - 1, j.at("input_text").get<std::string>(),
                     j.at("binary_label").get<int>(), j.value("is_oversampled", false)});
    } catch (const std::exception& e) {
      throw Error(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// (source_id, 0-based candidate index) -> probability.
using ScoreTable = std::map<std::pair<std::string, std::size_t>, double>;

inline void write_scores(const std::filesystem::path& path, const ScoreTable& scores) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write scores: " + path.string());
  for (const auto& [key, p] : scores) {
    nlohmann::json j{{"source_id", key.first}, {"candidate_index", key.second + 1}, {"probability", p}};
    out << j.dump() << '\n';
  }
}

inline ScoreTable import_scores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open scores: " + path.string());
  ScoreTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto k = j.at("candidate_index").get<std::size_t>();
      if (k < 1) throw Error("candidate_index is 1-based");
      const double p = j.at("probability").get<double>();
      if (!(p >= 0.0 && p <= 1.0)) throw Error("probability outside [0, 1]");
      table[{j.at("source_id").get<std::string>(), k - 1}] = p;
    } catch (const std::exception& e) {
      throw Error(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

/// Argmax predictions (label indices) from a score table. Every (id, k) pair
/// must be present.
inline std::vector<std::size_t> predict_from_scores(const ScoreTable& scores, const Dataset& d,
                                                    const LabelSet& labels) {
  std::vector<std::string> gaps;
  std::vector<std::size_t> pred;
  pred.reserve(d.size());
  for (const auto& e : d.examples) {
    std::size_t best = 0;
    double best_p = -1.0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
      const auto it = scores.find({e.id, k});
      if (it == scores.end()) {
        gaps.push_back("(" + e.id + ", " + std::to_string(k + 1) + ")");
        continue;
      }
      if (it->second > best_p) {
        best_p = it->second;
        best = k;
      }
    }
    pred.push_back(best);
  }
  if (!gaps.empty()) {
    const std::size_t shown = std::min<std::size_t>(gaps.size(), 20);
    std::string msg = "scores missing for " + std::to_string(gaps.size()) + " (source_id, candidate_index) pairs:";
    for (std::size_t i = 0; i < shown; ++i) msg += " " + gaps[i];
    if (shown < gaps.size()) msg += " ...";
    throw Error(msg);
  }
  return pred;
}

}  // namespace conshift
