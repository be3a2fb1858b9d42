#pragma once

// Label-transition prompts. For an example whose pre-shift label is L_j, the
// prompt for candidate L_k reads "remained <L_k> <suffix>" when k == j and
// "changed to <L_k> <suffix>" otherwise; the wording comes from a per-language
// catalog.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "conshift/common.hpp"
#include "conshift/corpus.hpp"

namespace conshift {

struct PromptCatalog {
  std::string id;
  std::string language = "en";
  /// Templates with a `{label}` slot.
  std::string remained;
  std::string changed_to;
  std::map<std::string, std::string> label_surface;
  /// Appended after a single space when non-empty ("match", "news").
  std::string suffix;

  bool operator==(const PromptCatalog&) const = default;
};

namespace detail {

inline std::string fill_label_slot(const std::string& tmpl, const std::string& surface) {
  static constexpr std::string_view kSlot = "{label}";
  std::string out;
  std::size_t pos = 0;
  for (;;) {
    const auto hit = tmpl.find(kSlot, pos);
    if (hit == std::string::npos) break;
    out.append(tmpl, pos, hit - pos);
    out += surface;
    pos = hit + kSlot.size();
  }
  out.append(tmpl, pos, std::string::npos);
  return out;
}

}  // namespace detail

/// Throws listing every missing or empty key.
inline void validate(const PromptCatalog& c) {
  std::vector<std::string> missing;
  if (c.remained.empty()) missing.push_back("templates.remained");
  if (c.changed_to.empty()) missing.push_back("templates.changed_to");
  for (const auto* t : {&c.remained, &c.changed_to}) {
    if (!t->empty() && t->find("{label}") == std::string::npos) {
      missing.push_back("{label} slot in '" + *t + "'");
    }
  }
  if (c.label_surface.empty()) missing.push_back("label_surface");
  for (const auto* t : {&c.remained, &c.changed_to, &c.suffix}) {
    if (t->find("[SEP]") != std::string::npos) throw Error("prompt catalog '" + c.id + "' text contains [SEP]");
  }
  for (const auto& [label, surface] : c.label_surface) {
    if (surface.empty()) missing.push_back("label_surface." + label);
  }
  if (!missing.empty()) throw Error("prompt catalog '" + c.id + "' is missing: " + join(missing, ", "));

  // Distinct surfaces keep candidate -> prompt injective.
  std::set<std::string> seen;
  for (const auto& [label, surface] : c.label_surface) {
    if (!seen.insert(surface).second) {
      throw Error("prompt catalog '" + c.id + "': surface '" + surface + "' is used by more than one label");
    }
  }
}

/// Throws unless every label of `labels` has a surface form in `c`.
inline void check_covers(const PromptCatalog& c, const LabelSet& labels) {
  std::vector<std::string> missing;
  for (const auto& l : labels.names()) {
    if (!c.label_surface.count(l)) missing.push_back("label_surface." + l);
  }
  if (!missing.empty()) throw Error("prompt catalog '" + c.id + "' is missing: " + join(missing, ", "));
}

inline std::string render_prompt(const std::string& pre_label, const std::string& candidate_label,
                                 const PromptCatalog& c) {
  if (!c.label_surface.count(pre_label)) {
    throw Error("unknown label '" + pre_label + "' for prompt catalog '" + c.id + "'");
  }
  const auto it = c.label_surface.find(candidate_label);
  if (it == c.label_surface.end()) {
    throw Error("unknown label '" + candidate_label + "' for prompt catalog '" + c.id + "'");
  }
  const auto& tmpl = candidate_label == pre_label ? c.remained : c.changed_to;
  std::string out = detail::fill_label_slot(tmpl, it->second);
  if (!c.suffix.empty()) {
    out += ' ';
    out += c.suffix;
  }
  return out;
}

inline nlohmann::json to_json(const PromptCatalog& c) {
  return {{"id", c.id},
          {"language", c.language},
          {"templates", {{"remained", c.remained}, {"changed_to", c.changed_to}}},
          {"label_surface", c.label_surface},
          {"suffix", c.suffix}};
}

inline PromptCatalog catalog_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("prompt catalog must be a JSON object");
  PromptCatalog c;
  c.id = j.value("id", std::string("custom"));
  c.language = j.value("language", std::string("en"));
  if (j.contains("templates") && j["templates"].is_object()) {
    c.remained = j["templates"].value("remained", std::string());
    c.changed_to = j["templates"].value("changed_to", std::string());
  }
  if (j.contains("label_surface") && j["label_surface"].is_object()) {
    for (const auto& [k, v] : j["label_surface"].items()) c.label_surface[k] = v.get<std::string>();
  }
  c.suffix = j.value("suffix", std::string());
  validate(c);
  return c;
}

inline void save_catalog(const std::filesystem::path& path, const PromptCatalog& c) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write prompt catalog: " + path.string());
  out << to_json(c).dump(2) << '\n';
}

// The built-in catalogs reproduce the published English/Spanish retail prompts
// and the English news prompts. The Spanish rows do not follow a
// "<template> <label> <suffix>" word order, so their surfaces carry the whole
// phrase after the verb.

inline PromptCatalog builtin_en_retail() {
  return {"en-retail",
          "en",
          "remained {label}",
          "changed to {label}",
          {{"exact", "exact"}, {"substitute", "substitute"}, {"complement", "complement"}, {"irrelevant", "irrelevant"}},
          "match"};
}

inline PromptCatalog builtin_es_retail() {
  return {"es-retail",
          "es",
          "permaneció {label}",
          "cambiado {label}",
          {{"exact", "a coincidencia exacta"},
           {"substitute", "para sustituir el partido"},
           {"complement", "para complementar la coincidencia"},
           {"irrelevant", "un partido irrelevante"}},
          ""};
}

inline PromptCatalog builtin_en_news() {
  return {"en-news", "en", "remained {label}", "changed to {label}",
          {{"relevant", "relevant"}, {"irrelevant", "irrelevant"}}, "news"};
}

inline std::vector<PromptCatalog> builtin_catalogs() {
  return {builtin_en_retail(), builtin_es_retail(), builtin_en_news()};
}

/// Resolves a built-in id ("en-retail", "es-retail", "en-news") or a JSON file path.
inline PromptCatalog load_catalog(const std::string& id_or_path) {
  for (auto& c : builtin_catalogs()) {
    if (c.id == id_or_path) return c;
  }
  std::ifstream in(id_or_path);
  if (!in) throw Error("no built-in prompt catalog or readable file named '" + id_or_path + "'");
  try {
    auto c = catalog_from_json(nlohmann::json::parse(in));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad prompt catalog " + id_or_path + ": " + e.what());
  }
}

inline const std::vector<std::string>& default_decoys() {
  static const std::vector<std::string> words = {"cat", "lion", "zebra", "dog", "tiger", "horse", "otter", "crane"};
  return words;
}

/// Replaces the surface of the i-th label of `labels` with decoys[i]. With
/// `shuffle` set, the decoy-to-label assignment is a seeded permutation.
inline PromptCatalog randomize_labels(const PromptCatalog& c, const LabelSet& labels,
                                      const std::vector<std::string>& decoys, std::uint64_t seed = 0,
                                      bool shuffle = false) {
  if (decoys.size() != labels.size()) {
    throw Error("randomize_labels needs " + std::to_string(labels.size()) + " decoys, got " +
                std::to_string(decoys.size()));
  }
  if (std::set<std::string>(decoys.begin(), decoys.end()).size() != decoys.size()) {
    throw Error("decoy words must be distinct");
  }
  check_covers(c, labels);
  std::vector<std::string> order = decoys;
  if (shuffle) Rng(derive_seed(seed, "decoys")).shuffle(order);
  PromptCatalog out = c;
  out.id = c.id + "+random";
  for (std::size_t i = 0; i < labels.size(); ++i) out.label_surface[labels[i]] = order[i];
  validate(out);
  return out;
}

/// First K words of the default decoy list.
inline std::vector<std::string> decoys_for(const LabelSet& labels) {
  if (labels.size() > default_decoys().size()) throw Error("not enough default decoy words for this label set");
  return {default_decoys().begin(), default_decoys().begin() + std::ptrdiff_t(labels.size())};
}

}  // namespace conshift
