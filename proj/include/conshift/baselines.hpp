#pragma once

// The comparison methods behind one interface: each takes the pre-shift
// training data, the (possibly few-shot) post-shift training data and a test
// set, and returns one post-shift label per test example.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "conshift/common.hpp"
#include "conshift/corpus.hpp"
#include "conshift/entail.hpp"
#include "conshift/eval_stats.hpp"
#include "conshift/features.hpp"
#include "conshift/model.hpp"
#include "conshift/prompt_catalog.hpp"

namespace conshift {

enum class MethodKind { majority, pre_shift_only, finetuned, finetuned_post_only, l1l2, entail };
enum class PromptVariant { informative, random };

inline const char* to_string(MethodKind k) {
  switch (k) {
    case MethodKind::majority: return "majority";
    case MethodKind::pre_shift_only: return "pre_shift_only";
    case MethodKind::finetuned: return "finetuned";
    case MethodKind::finetuned_post_only: return "finetuned_post_only";
    case MethodKind::l1l2: return "l1l2";
    case MethodKind::entail: return "entail";
  }
  return "?";
}

inline MethodKind method_kind_from_string(std::string_view s) {
  for (auto k : {MethodKind::majority, MethodKind::pre_shift_only, MethodKind::finetuned,
                 MethodKind::finetuned_post_only, MethodKind::l1l2, MethodKind::entail}) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown method kind '" + std::string(s) + "'");
}

inline const char* to_string(PromptVariant v) { return v == PromptVariant::informative ? "informative" : "random"; }

struct MethodSpec {
  std::string id;
  MethodKind kind = MethodKind::entail;
  // entail only
  PromptVariant prompt_variant = PromptVariant::informative;
  std::string catalog = "en-news";  // built-in id or JSON path
  ConcatMode mode = ConcatMode::single_segment;
  bool oversample = false;
  std::vector<std::string> decoys;  // empty: first K default decoys
  bool shuffle_decoys = false;
  // post-shift stage (and the only stage for post-only / entail)
  TrainConfig train;
  // pre-shift stage of finetuned / l1l2 / pre_shift_only; epochs == 0 skips it
  TrainConfig pre_train;
  FeaturizerConfig featurizer;

  std::string name() const { return id.empty() ? std::string(to_string(kind)) : id; }
};

inline nlohmann::json to_json(const MethodSpec& m) {
  nlohmann::json j{{"id", m.name()},
                   {"kind", to_string(m.kind)},
                   {"train", to_json(m.train)},
                   {"pre_train", to_json(m.pre_train)},
                   {"featurizer", to_json(m.featurizer)}};
  if (m.kind == MethodKind::entail) {
    j["prompt_variant"] = to_string(m.prompt_variant);
    j["catalog"] = m.catalog;
    j["mode"] = to_string(m.mode);
    j["oversample"] = m.oversample;
    j["decoys"] = m.decoys;
    j["shuffle_decoys"] = m.shuffle_decoys;
  }
  return j;
}

/// `defaults` supplies train/featurizer settings not given in `j`.
inline MethodSpec method_spec_from_json(const nlohmann::json& j, const MethodSpec& defaults = {}) {
  try {
    MethodSpec m = defaults;
    m.kind = method_kind_from_string(j.at("kind").get<std::string>());
    m.id = j.value("id", std::string(to_string(m.kind)));
    if (j.contains("prompt_variant")) {
      const auto v = j["prompt_variant"].get<std::string>();
      if (v == "informative") m.prompt_variant = PromptVariant::informative;
      else if (v == "random") m.prompt_variant = PromptVariant::random;
      else throw Error("unknown prompt_variant '" + v + "'");
    }
    m.catalog = j.value("catalog", m.catalog);
    if (j.contains("mode")) m.mode = concat_mode_from_string(j["mode"].get<std::string>());
    m.oversample = j.value("oversample", m.oversample);
    m.decoys = j.value("decoys", m.decoys);
    m.shuffle_decoys = j.value("shuffle_decoys", m.shuffle_decoys);
    if (j.contains("train")) m.train = train_config_from_json(j["train"], m.train);
    if (j.contains("pre_train")) {
      const auto& pj = j["pre_train"];
      m.pre_train = train_config_from_json(pj, m.pre_train);
    }
    if (j.contains("featurizer")) m.featurizer = featurizer_from_json(j["featurizer"]);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad method spec: ") + e.what());
  }
}

struct Predictions {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;  // indices into the post label set
};

inline ConfusionMatrix confusion(const Dataset& test, const Predictions& p) {
  if (p.ids.size() != test.size()) throw Error("prediction count does not match the test set");
  ConfusionMatrix cm(test.post_labels);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (p.ids[i] != test.examples[i].id) throw Error("prediction order does not match the test set");
    cm.add(test.post_index(test.examples[i]), p.labels[i]);
  }
  return cm;
}

namespace detail {

inline std::string direct_text(const Example& e) {
  if (e.text_b) return e.text_a + " [SEP] " + *e.text_b;
  return e.text_a;
}

inline std::vector<SparseVector> featurize_direct(const Dataset& d, const FeaturizerConfig& f) {
  std::vector<SparseVector> out;
  out.reserve(d.size());
  for (const auto& e : d.examples) out.push_back(featurize(direct_text(e), f));
  return out;
}

/// Index of a pre-shift label inside the post-shift label set.
inline std::size_t pre_as_post(const Dataset& d, const Example& e) {
  if (auto k = d.post_labels.find(e.pre_label)) return *k;
  throw Error("pre-shift label '" + e.pre_label + "' is not in the post-shift label set; direct classifiers need a shared label space");
}

inline TrainConfig seeded(TrainConfig c, std::uint64_t seed, const char* stage) {
  c.seed = derive_seed(seed, stage);
  return c;
}

inline Model train_pre_stage(const MethodSpec& spec, const Dataset& pre_train, std::uint64_t seed) {
  if (pre_train.empty()) throw Error(spec.name() + ": pre-shift training data is empty");
  const auto x = featurize_direct(pre_train, spec.featurizer);
  std::vector<Sample> samples;
  samples.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) samples.push_back({x[i], {pre_as_post(pre_train, pre_train.examples[i])}});
  return train(samples, seeded(spec.pre_train, seed, "pre-stage"), Head::multiclass, pre_train.post_labels.size(),
               spec.featurizer);
}

inline Predictions predict_direct(const Model& m, const Dataset& test) {
  Predictions p;
  for (const auto& e : test.examples) {
    p.ids.push_back(e.id);
    p.labels.push_back(predict_class(m, featurize(direct_text(e), m.featurizer)));
  }
  return p;
}

}  // namespace detail

/// The catalog an entail method prompts with: the named catalog, or its
/// decoy-labelled variant.
inline PromptCatalog resolve_catalog(const MethodSpec& spec, const LabelSet& labels, std::uint64_t seed) {
  PromptCatalog c = load_catalog(spec.catalog);
  check_covers(c, labels);
  if (spec.prompt_variant == PromptVariant::random) {
    c = randomize_labels(c, labels, spec.decoys.empty() ? decoys_for(labels) : spec.decoys, seed, spec.shuffle_decoys);
  }
  return c;
}

/// Trains the entailment head on the augmented post-shift data.
inline Model train_entail(const MethodSpec& spec, const Dataset& post_train, const PromptCatalog& catalog,
                          std::uint64_t seed) {
  const auto aug = augment_dataset(post_train, catalog, spec.mode, spec.oversample, derive_seed(seed, "oversample"));
  std::vector<Sample> samples;
  samples.reserve(aug.samples.size());
  for (const auto& s : aug.samples) {
    samples.push_back({featurize(s.input_text, spec.featurizer), {std::size_t(s.binary_label)}});
  }
  return train(samples, detail::seeded(spec.train, seed, "post-stage"), Head::binary, 2, spec.featurizer);
}

inline Predictions predict_entail(const Model& m, const Dataset& test, const PromptCatalog& catalog, ConcatMode mode) {
  Predictions p;
  auto scorer = [&](std::string_view input) { return score(m, featurize(input, m.featurizer)); };
  for (const auto& e : test.examples) {
    p.ids.push_back(e.id);
    p.labels.push_back(predict_label_index(scorer, e, test.post_labels, catalog, mode));
  }
  return p;
}

inline Predictions run_method(const MethodSpec& spec, const Dataset& pre_train, const Dataset& post_train,
                              const Dataset& test, std::uint64_t seed) {
  if (!(pre_train.post_labels == test.post_labels) || !(post_train.post_labels == test.post_labels)) {
    throw Error(spec.name() + ": train and test post-shift label sets differ");
  }
  const bool needs_post = spec.kind != MethodKind::pre_shift_only;
  if (needs_post && post_train.empty()) throw Error(spec.name() + ": post-shift training data is empty");
  const LabelSet& labels = test.post_labels;

  switch (spec.kind) {
    case MethodKind::majority: {
      const auto counts = post_train.post_counts();
      const std::size_t best = std::size_t(std::max_element(counts.begin(), counts.end()) - counts.begin());
      Predictions p;
      for (const auto& e : test.examples) {
        p.ids.push_back(e.id);
        p.labels.push_back(best);
      }
      return p;
    }
    case MethodKind::pre_shift_only:
      return detail::predict_direct(detail::train_pre_stage(spec, pre_train, seed), test);

    case MethodKind::finetuned:
    case MethodKind::finetuned_post_only:
    case MethodKind::l1l2: {
      std::optional<Model> warm;
      if (spec.kind != MethodKind::finetuned_post_only && spec.pre_train.epochs > 0) {
        warm = detail::train_pre_stage(spec, pre_train, seed);
      }
      const auto x = detail::featurize_direct(post_train, spec.featurizer);
      std::vector<Sample> samples;
      samples.reserve(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto& e = post_train.examples[i];
        Sample s{x[i], {post_train.post_index(e)}};
        if (spec.kind == MethodKind::l1l2) s.targets = {detail::pre_as_post(post_train, e), post_train.post_index(e)};
        samples.push_back(std::move(s));
      }
      const auto cfg = detail::seeded(spec.train, seed, "post-stage");
      const Model m = train(samples, cfg, Head::multiclass, labels.size(), spec.featurizer, warm ? &*warm : nullptr);
      return detail::predict_direct(m, test);
    }
    case MethodKind::entail: {
      const auto catalog = resolve_catalog(spec, labels, derive_seed(seed, "catalog"));
      const Model m = train_entail(spec, post_train, catalog, seed);
      return predict_entail(m, test, catalog, spec.mode);
    }
  }
  throw Error("unhandled method kind");
}

/// Scores exported entailment rows with a binary model, as an external scorer
/// would.
inline ScoreTable self_score(const Model& m, const std::vector<EntailSample>& rows) {
  if (m.head != Head::binary) throw Error("self-scoring needs a binary (entailment) model");
  ScoreTable t;
  for (const auto& r : rows) {
    if (r.is_oversampled) continue;
    t[{r.source_id, r.candidate_index}] = score(m, featurize(r.input_text, m.featurizer));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Predictions file: JSONL {"id", "predicted_label"}

inline void save_predictions(const std::filesystem::path& path, const Predictions& p, const LabelSet& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write predictions: " + path.string());
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    out << nlohmann::json{{"id", p.ids[i]}, {"predicted_label", labels[p.labels[i]]}}.dump() << '\n';
  }
}

/// Reads a predictions file and aligns it with `gold` by id.
inline Predictions load_predictions(const std::filesystem::path& path, const Dataset& gold) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open predictions: " + path.string());
  std::map<std::string, std::string> by_id;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      by_id[j.at("id").get<std::string>()] = j.at("predicted_label").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  Predictions p;
  for (const auto& e : gold.examples) {
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) throw Error("no prediction for gold id '" + e.id + "'");
    p.ids.push_back(e.id);
    p.labels.push_back(gold.post_labels.index_of(it->second));
  }
  return p;
}

}  // namespace conshift
