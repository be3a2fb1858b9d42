#pragma once

// Dataset representation: examples carrying both a pre-shift and a post-shift
// label, file I/O, shift simulation, and the seeded sampling utilities used by
// the experiment harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conshift/common.hpp"

namespace conshift {

/// Ordered list of K >= 2 distinct label names. Position defines the label
/// index used everywhere else (0-based in code, 1-based in exported files).
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) {
      throw Error("label set needs at least 2 labels, got " + std::to_string(names_.size()));
    }
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw Error("label set contains an empty label name");
      if (!seen.insert(n).second) throw Error("duplicate label in label set: " + n);
    }
  }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& operator[](std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return std::nullopt;
  }
  bool contains(std::string_view name) const { return find(name).has_value(); }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw Error("label '" + std::string(name) + "' is not in label set [" + join(names_, ", ") + "]");
  }

  bool operator==(const LabelSet&) const = default;

 private:
  std::vector<std::string> names_;
};

struct Example {
  std::string id;
  std::string text_a;
  std::optional<std::string> text_b;
  std::string pre_label;
  std::string post_label;
  std::string lang = "en";
  std::optional<std::string> topic;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::string name;
  LabelSet pre_labels;
  LabelSet post_labels;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  std::size_t post_index(const Example& e) const { return post_labels.index_of(e.post_label); }
  std::size_t pre_index(const Example& e) const { return pre_labels.index_of(e.pre_label); }

  /// Per-label counts n_k' under the post-shift labels, in label order.
  std::vector<std::size_t> post_counts() const {
    std::vector<std::size_t> c(post_labels.size(), 0);
    for (const auto& e : examples) ++c[post_index(e)];
    return c;
  }
  std::vector<std::size_t> pre_counts() const {
    std::vector<std::size_t> c(pre_labels.size(), 0);
    for (const auto& e : examples) ++c[pre_index(e)];
    return c;
  }

  /// Same label sets and name, different examples.
  Dataset with_examples(std::vector<Example> ex) const {
    Dataset d{name, pre_labels, post_labels, std::move(ex)};
    return d;
  }

  bool operator==(const Dataset&) const = default;
};

/// Throws if any example violates the dataset invariants.
inline void validate(const Dataset& d) {
  for (std::size_t i = 0; i < d.examples.size(); ++i) {
    const auto& e = d.examples[i];
    if (e.text_a.empty()) throw Error("example '" + e.id + "' has empty text_a");
    if (!d.pre_labels.contains(e.pre_label)) {
      throw Error("example '" + e.id + "': pre_label '" + e.pre_label + "' is not a declared pre-shift label");
    }
    if (!d.post_labels.contains(e.post_label)) {
      throw Error("example '" + e.id + "': post_label '" + e.post_label + "' is not a declared post-shift label");
    }
  }
}

// ---------------------------------------------------------------------------
// Shift specification

struct ShiftSpec {
  /// (topic, pre_label) -> post_label. Examples without a topic match topic "".
  std::map<std::pair<std::string, std::string>, std::string> rules;
  std::optional<std::string> default_label;

  void add(std::string topic, std::string pre_label, std::string post_label) {
    rules[{std::move(topic), std::move(pre_label)}] = std::move(post_label);
  }

  std::optional<std::string> lookup(const std::string& topic, const std::string& pre_label) const {
    if (auto it = rules.find({topic, pre_label}); it != rules.end()) return it->second;
    return default_label;
  }

  static ShiftSpec identity(const Dataset& d) {
    ShiftSpec s;
    for (const auto& e : d.examples) s.add(e.topic.value_or(""), e.pre_label, e.pre_label);
    return s;
  }
};

inline nlohmann::json to_json(const ShiftSpec& s) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& [key, post] : s.rules) {
    rules.push_back({{"topic", key.first}, {"pre_label", key.second}, {"post_label", post}});
  }
  nlohmann::json j{{"rules", rules}};
  j["default"] = s.default_label ? nlohmann::json(*s.default_label) : nlohmann::json(nullptr);
  return j;
}

inline ShiftSpec shift_spec_from_json(const nlohmann::json& j) {
  ShiftSpec s;
  if (!j.is_object() || !j.contains("rules") || !j["rules"].is_array()) {
    throw Error("shift spec must be an object with a 'rules' array");
  }
  for (const auto& r : j["rules"]) {
    if (!r.contains("pre_label") || !r.contains("post_label")) {
      throw Error("shift rule needs 'pre_label' and 'post_label': " + r.dump());
    }
    std::string topic = r.contains("topic") && r["topic"].is_string() ? r["topic"].get<std::string>() : "";
    s.add(topic, r["pre_label"].get<std::string>(), r["post_label"].get<std::string>());
  }
  if (j.contains("default") && j["default"].is_string()) s.default_label = j["default"].get<std::string>();
  return s;
}

inline ShiftSpec load_shift_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open shift spec: " + path.string());
  try {
    return shift_spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad shift spec " + path.string() + ": " + e.what());
  }
}

/// Relabels every example with spec(topic, pre_label). Ids, texts, pre-labels
/// and order are untouched.
inline Dataset apply_shift(const Dataset& d, const ShiftSpec& spec) {
  std::set<std::pair<std::string, std::string>> uncovered;
  Dataset out = d;
  for (auto& e : out.examples) {
    const std::string topic = e.topic.value_or("");
    if (auto post = spec.lookup(topic, e.pre_label)) {
      if (!d.post_labels.contains(*post)) {
        throw Error("shift spec maps (" + topic + ", " + e.pre_label + ") to undeclared post label '" + *post + "'");
      }
      e.post_label = *post;
    } else {
      uncovered.insert({topic, e.pre_label});
    }
  }
  if (!uncovered.empty()) {
    std::string msg = "shift spec does not cover:";
    for (const auto& [t, l] : uncovered) msg += " (" + t + ", " + l + ")";
    throw Error(msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

enum class DataFormat { jsonl, csv };

inline DataFormat format_from_path(const std::filesystem::path& p) {
  return p.extension() == ".csv" ? DataFormat::csv : DataFormat::jsonl;
}

struct DeclaredLabels {
  std::vector<std::string> pre;
  std::vector<std::string> post;
};

inline std::filesystem::path labels_sidecar_path(const std::filesystem::path& data) {
  auto p = data;
  p += ".labels.json";
  return p;
}

inline std::optional<DeclaredLabels> read_labels_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    auto j = nlohmann::json::parse(in);
    return DeclaredLabels{j.at("pre_labels").get<std::vector<std::string>>(),
                          j.at("post_labels").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad labels file " + path.string() + ": " + e.what());
  }
}

inline void write_labels_file(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write labels file: " + path.string());
  nlohmann::json j{{"pre_labels", d.pre_labels.names()}, {"post_labels", d.post_labels.names()}};
  out << j.dump(2) << '\n';
}

namespace detail {

/// RFC 4180 style record splitter (quoted fields may contain commas, doubled
/// quotes and newlines). Returns records with the physical line each began on.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::istream& in) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool any = false;
  std::size_t line = 1;
  std::size_t row_start = 1;
  char c;
  auto end_row = [&] {
    fields.push_back(std::move(field));
    field.clear();
    if (!(fields.size() == 1 && fields[0].empty())) rows.emplace_back(row_start, std::move(fields));
    fields.clear();
    any = false;
  };
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (!any) row_start = line;
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      end_row();
      ++line;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw Error("unterminated quoted CSV field starting on line " + std::to_string(row_start));
  if (any) end_row();
  return rows;
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> infer_labels(const std::vector<Example>& ex, bool post) {
  std::vector<std::string> names;
  for (const auto& e : ex) {
    const auto& l = post ? e.post_label : e.pre_label;
    if (std::find(names.begin(), names.end(), l) == names.end()) names.push_back(l);
  }
  return names;
}

inline Example example_from_json(const nlohmann::json& j, std::size_t line) {
  auto required = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw Error("line " + std::to_string(line) + ": missing field '" + key + "'");
    const auto& v = j[key];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw Error("line " + std::to_string(line) + ": field '" + key + "' must be a string");
  };
  auto optional = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw Error("line " + std::to_string(line) + ": field '" + key + "' must be a string or null");
    return j[key].get<std::string>();
  };
  Example e;
  e.id = required("id");
  e.text_a = required("text_a");
  if (e.text_a.empty()) throw Error("line " + std::to_string(line) + ": field 'text_a' is empty");
  e.text_b = optional("text_b");
  e.pre_label = required("pre_label");
  e.post_label = required("post_label");
  e.lang = optional("lang").value_or("en");
  e.topic = optional("topic");
  return e;
}

}  // namespace detail

inline nlohmann::json to_json(const Example& e) {
  nlohmann::json j;
  j["id"] = e.id;
  j["text_a"] = e.text_a;
  j["text_b"] = e.text_b ? nlohmann::json(*e.text_b) : nlohmann::json(nullptr);
  j["pre_label"] = e.pre_label;
  j["post_label"] = e.post_label;
  j["lang"] = e.lang;
  j["topic"] = e.topic ? nlohmann::json(*e.topic) : nlohmann::json(nullptr);
  return j;
}

/// Loads a JSONL or CSV dataset. Label sets come from, in order of priority:
/// explicit `labels_file`, the `<path>.labels.json` sidecar, a leading JSONL
/// header line `{"pre_labels": [...], "post_labels": [...]}`, or (for
/// non-empty files) first-appearance order in the data.
inline Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                            const std::optional<std::filesystem::path>& labels_file = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset: " + path.string());

  std::optional<DeclaredLabels> declared =
      labels_file ? read_labels_file(*labels_file) : read_labels_file(labels_sidecar_path(path));
  if (labels_file && !declared) throw Error("labels file not found: " + labels_file->string());

  std::vector<Example> examples;
  if (format == DataFormat::jsonl) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + " line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
      }
      if (!j.is_object()) throw Error(path.string() + " line " + std::to_string(lineno) + ": record is not an object");
      if (examples.empty() && !j.contains("id") && j.contains("pre_labels") && j.contains("post_labels")) {
        if (!declared) {
          declared = DeclaredLabels{j["pre_labels"].get<std::vector<std::string>>(),
                                    j["post_labels"].get<std::vector<std::string>>()};
        }
        continue;
      }
      try {
        examples.push_back(detail::example_from_json(j, lineno));
      } catch (const Error& e) {
        throw Error(path.string() + " " + e.what());
      }
    }
  } else {
    auto rows = detail::parse_csv(in);
    if (!rows.empty()) {
      const auto& header = rows.front().second;
      std::map<std::string, std::size_t> col;
      for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
      for (const char* req : {"id", "text_a", "pre_label", "post_label"}) {
        if (!col.count(req)) throw Error(path.string() + " line 1: CSV header lacks column '" + req + "'");
      }
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [lineno, fields] = rows[r];
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [name, idx] : col) {
          if (idx >= fields.size()) {
            throw Error(path.string() + " line " + std::to_string(lineno) + ": missing field '" + name + "'");
          }
          // Empty optional cells read as null.
          if (fields[idx].empty() && (name == "text_b" || name == "topic" || name == "lang")) continue;
          j[name] = fields[idx];
        }
        try {
          examples.push_back(detail::example_from_json(j, lineno));
        } catch (const Error& e) {
          throw Error(path.string() + " " + e.what());
        }
      }
    }
  }

  Dataset d;
  d.name = path.stem().string();
  if (declared) {
    d.pre_labels = LabelSet(declared->pre);
    d.post_labels = LabelSet(declared->post);
  } else {
    if (examples.empty()) throw Error(path.string() + ": empty dataset and no declared label sets");
    d.pre_labels = LabelSet(detail::infer_labels(examples, false));
    d.post_labels = LabelSet(detail::infer_labels(examples, true));
  }
  d.examples = std::move(examples);
  validate(d);
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& path) { return load_dataset(path, format_from_path(path)); }

/// Writes the dataset and its `.labels.json` sidecar.
inline void save_dataset(const std::filesystem::path& path, const Dataset& d,
                         std::optional<DataFormat> format = std::nullopt) {
  const DataFormat fmt = format.value_or(format_from_path(path));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset: " + path.string());
  if (fmt == DataFormat::jsonl) {
    for (const auto& e : d.examples) out << to_json(e).dump() << '\n';
  } else {
    out << "id,text_a,text_b,pre_label,post_label,lang,topic\n";
    for (const auto& e : d.examples) {
      out << detail::csv_escape(e.id) << ',' << detail::csv_escape(e.text_a) << ','
          << detail::csv_escape(e.text_b.value_or("")) << ',' << detail::csv_escape(e.pre_label) << ','
          << detail::csv_escape(e.post_label) << ',' << detail::csv_escape(e.lang) << ','
          << detail::csv_escape(e.topic.value_or("")) << '\n';
    }
  }
  write_labels_file(labels_sidecar_path(path), d);
}

// ---------------------------------------------------------------------------
// Sampling

/// Largest-remainder apportionment of `n` over class `counts`; remainder ties
/// go to the lower label index. Classes with a zero quota but non-zero count
/// take one unit from the largest quota when n allows.
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& counts, std::size_t n) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  std::vector<std::size_t> quota(counts.size(), 0);
  if (total == 0 || n == 0) return quota;
  std::vector<std::pair<std::uint64_t, std::size_t>> rem;  // (remainder, index)
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const std::uint64_t num = std::uint64_t(n) * counts[k];
    quota[k] = std::size_t(num / total);
    assigned += quota[k];
    rem.emplace_back(num % total, k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[rem[i % rem.size()].second];

  std::size_t present = 0;
  for (auto c : counts) present += c > 0;
  if (n >= present) {
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (counts[k] == 0 || quota[k] > 0) continue;
      std::size_t donor = 0;
      for (std::size_t j = 1; j < quota.size(); ++j) {
        if (quota[j] > quota[donor]) donor = j;
      }
      --quota[donor];
      ++quota[k];
    }
  }
  return quota;
}

namespace detail {

/// Example positions grouped by post label, each group in a seeded order that
/// depends only on (seed, label) so prefixes are nested across budgets.
inline std::vector<std::vector<std::size_t>> seeded_class_orders(const Dataset& d, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(d.post_labels.size());
  for (std::size_t i = 0; i < d.examples.size(); ++i) by_class[d.post_index(d.examples[i])].push_back(i);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    Rng rng(derive_seed(seed, "class-order", d.post_labels[k]));
    rng.shuffle(by_class[k]);
  }
  return by_class;
}

inline Dataset select(const Dataset& d, std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  std::vector<Example> ex;
  ex.reserve(positions.size());
  for (auto p : positions) ex.push_back(d.examples[p]);
  return d.with_examples(std::move(ex));
}

}  // namespace detail

/// Draws `n` examples without replacement, stratified by post label. The
/// result keeps dataset order. For a fixed seed, samples for a smaller budget
/// are subsets of samples for a larger one whenever the class quotas are
/// monotone (always the case for the 10/100/1000 ladder on non-tiny classes).
inline Dataset fewshot_sample(const Dataset& d, std::size_t n, std::uint64_t seed, Warnings* warnings = nullptr) {
  if (n < 1) throw Error("few-shot budget must be >= 1");
  if (n > d.size()) {
    throw Error("few-shot budget " + std::to_string(n) + " exceeds dataset size " + std::to_string(d.size()));
  }
  const auto counts = d.post_counts();
  std::size_t present = 0;
  for (auto c : counts) present += c > 0;
  if (n < present) {
    warn(warnings, "budget " + std::to_string(n) + " is below the number of post-shift classes (" +
                       std::to_string(present) + "); using a plain random sample");
    Rng rng(derive_seed(seed, "plain-sample"));
    auto perm = rng.permutation(d.size());
    perm.resize(n);
    return detail::select(d, std::move(perm));
  }
  const auto quota = apportion(counts, n);
  const auto orders = detail::seeded_class_orders(d, seed);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < orders.size(); ++k) {
    chosen.insert(chosen.end(), orders[k].begin(), orders[k].begin() + std::ptrdiff_t(quota[k]));
  }
  return detail::select(d, std::move(chosen));
}

/// Stratified train/test partition. Singleton classes stay in train.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double test_fraction, std::uint64_t seed,
                                         Warnings* warnings = nullptr) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error("test_fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  }
  const auto orders = detail::seeded_class_orders(d, derive_seed(seed, "split"));
  std::vector<std::size_t> train, test;
  for (std::size_t k = 0; k < orders.size(); ++k) {
    const auto& ord = orders[k];
    if (ord.empty()) continue;
    std::size_t n_test = 0;
    if (ord.size() == 1) {
      warn(warnings, "class '" + d.post_labels[k] + "' has a single example; kept in train");
    } else {
      n_test = std::size_t(std::llround(test_fraction * double(ord.size())));
      n_test = std::clamp<std::size_t>(n_test, 1, ord.size() - 1);
    }
    test.insert(test.end(), ord.begin(), ord.begin() + std::ptrdiff_t(n_test));
    train.insert(train.end(), ord.begin() + std::ptrdiff_t(n_test), ord.end());
  }
  return {detail::select(d, std::move(train)), detail::select(d, std::move(test))};
}

/// Downsamples every post-label class to the smallest class count.
inline Dataset rebalance(const Dataset& d, std::uint64_t seed) {
  const auto counts = d.post_counts();
  const std::size_t m = *std::min_element(counts.begin(), counts.end());
  if (m == 0) throw Error("rebalance requires every post-shift class to be non-empty");
  const auto orders = detail::seeded_class_orders(d, derive_seed(seed, "rebalance"));
  std::vector<std::size_t> chosen;
  for (const auto& ord : orders) chosen.insert(chosen.end(), ord.begin(), ord.begin() + std::ptrdiff_t(m));
  return detail::select(d, std::move(chosen));
}

// ---------------------------------------------------------------------------
// Synthetic topic corpus

struct SynthTopic {
  std::string name;
  std::vector<std::string> vocabulary;
  std::string pre_label;
};

struct SynthConfig {
  std::string name = "synth";
  std::size_t n_per_topic = 100;
  std::size_t tokens_per_text = 16;
  double noise_rate = 0.0;
  std::vector<SynthTopic> topics;
  LabelSet pre_labels;
  LabelSet post_labels;
  ShiftSpec shift;
  std::string lang = "en";
};

/// Deterministic pseudo-words, distinct across the whole call, split into
/// `n_topics` vocabularies of `words_per_topic` each. Words are built from
/// random syllables so vocabularies share no systematic spelling.
inline std::vector<std::vector<std::string>> make_vocabularies(std::size_t n_topics, std::size_t words_per_topic,
                                                               std::uint64_t seed) {
  static constexpr std::string_view kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                                 "s", "t", "v", "z", "br", "dr", "st", "tr", "gl", "sh"};
  static constexpr std::string_view kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  Rng rng(derive_seed(seed, "vocabulary"));
  std::set<std::string> used;
  std::vector<std::vector<std::string>> vocab(n_topics);
  for (auto& v : vocab) {
    while (v.size() < words_per_topic) {
      std::string w;
      const std::size_t syl = 2 + rng.below(2);
      for (std::size_t s = 0; s < syl; ++s) {
        w += kOnsets[rng.below(std::size(kOnsets))];
        w += kNuclei[rng.below(std::size(kNuclei))];
      }
      if (used.insert(w).second) v.push_back(std::move(w));
    }
  }
  return vocab;
}

/// Generates `n_per_topic` keyword-bag texts per topic. Each token comes from
/// the topic's own vocabulary, or with probability `noise_rate` from a
/// uniformly chosen other topic. Post labels follow `config.shift`.
inline Dataset synth_generate(const SynthConfig& config, std::uint64_t seed) {
  if (config.topics.size() < 2) throw Error("synthetic corpus needs at least 2 topics");
  if (!(config.noise_rate >= 0.0 && config.noise_rate < 0.5)) throw Error("noise_rate must lie in [0, 0.5)");
  if (config.tokens_per_text == 0) throw Error("tokens_per_text must be >= 1");
  std::map<std::string, std::string> owner;
  std::vector<std::string> overlaps;
  for (const auto& t : config.topics) {
    if (t.vocabulary.empty()) throw Error("topic '" + t.name + "' has an empty vocabulary");
    for (const auto& w : t.vocabulary) {
      auto [it, fresh] = owner.emplace(w, t.name);
      if (!fresh && it->second != t.name) overlaps.push_back(w + " (" + it->second + ", " + t.name + ")");
    }
  }
  if (!overlaps.empty()) throw Error("topic vocabularies overlap: " + join(overlaps, ", "));

  Rng rng(derive_seed(seed, "synth-generate", config.name));
  Dataset d;
  d.name = config.name;
  d.pre_labels = config.pre_labels;
  d.post_labels = config.post_labels;
  const std::size_t T = config.topics.size();
  for (std::size_t t = 0; t < T; ++t) {
    const auto& topic = config.topics[t];
    for (std::size_t i = 0; i < config.n_per_topic; ++i) {
      std::vector<std::string> tokens;
      tokens.reserve(config.tokens_per_text);
      for (std::size_t j = 0; j < config.tokens_per_text; ++j) {
        std::size_t src = t;
        if (config.noise_rate > 0.0 && rng.uniform() < config.noise_rate) {
          src = rng.below(T - 1);
          if (src >= t) ++src;
        }
        const auto& v = config.topics[src].vocabulary;
        tokens.push_back(v[rng.below(v.size())]);
      }
      Example e;
      char idbuf[32];
      std::snprintf(idbuf, sizeof idbuf, "%06zu", i);
      e.id = topic.name + "-" + idbuf;
      e.text_a = join(tokens, " ");
      e.pre_label = topic.pre_label;
      e.post_label = topic.pre_label;
      e.lang = config.lang;
      e.topic = topic.name;
      d.examples.push_back(std::move(e));
    }
  }
  // Interleave topics so file order carries no label information.
  rng.shuffle(d.examples);
  return apply_shift(d, config.shift);
}

/// Four-topic news stand-in: before the shift World and Business are
/// relevant; afterwards Sports, SciTech and Business are relevant and World
/// is not.
inline SynthConfig news_shift_config(std::size_t n_per_topic, double noise_rate, std::size_t vocab_per_topic = 400,
                                     std::uint64_t vocab_seed = 2023) {
  SynthConfig c;
  c.name = "news-shift";
  c.n_per_topic = n_per_topic;
  c.noise_rate = noise_rate;
  c.pre_labels = LabelSet({"relevant", "irrelevant"});
  c.post_labels = LabelSet({"relevant", "irrelevant"});
  const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> plan = {
      {"World", {"relevant", "irrelevant"}},
      {"Business", {"relevant", "relevant"}},
      {"Sports", {"irrelevant", "relevant"}},
      {"SciTech", {"irrelevant", "relevant"}},
  };
  auto vocab = make_vocabularies(plan.size(), vocab_per_topic, vocab_seed);
  for (std::size_t t = 0; t < plan.size(); ++t) {
    c.topics.push_back({plan[t].first, std::move(vocab[t]), plan[t].second.first});
    c.shift.add(plan[t].first, plan[t].second.first, plan[t].second.second);
  }
  return c;
}

/// Same four topics with every label inverted by the shift.
inline SynthConfig flip_shift_config(std::size_t n_per_topic, double noise_rate, std::size_t vocab_per_topic = 400,
                                     std::uint64_t vocab_seed = 2023) {
  SynthConfig c = news_shift_config(n_per_topic, noise_rate, vocab_per_topic, vocab_seed);
  c.name = "flip-shift";
  c.shift = ShiftSpec{};
  for (const auto& t : c.topics) c.shift.add(t.name, t.pre_label, t.pre_label == "relevant" ? "irrelevant" : "relevant");
  return c;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json topics = nlohmann::json::array();
  for (const auto& t : c.topics) topics.push_back({{"name", t.name}, {"pre_label", t.pre_label}, {"vocabulary", t.vocabulary}});
  return {{"name", c.name},
          {"n_per_topic", c.n_per_topic},
          {"tokens_per_text", c.tokens_per_text},
          {"noise_rate", c.noise_rate},
          {"lang", c.lang},
          {"pre_labels", c.pre_labels.names()},
          {"post_labels", c.post_labels.names()},
          {"topics", topics},
          {"shift", to_json(c.shift)}};
}

/// Accepts either a full description (topics with vocabularies) or a preset:
/// {"preset": "news" | "flip", "n_per_topic": .., "noise_rate": ..,
///  "vocab_per_topic": .., "vocab_seed": ..}.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("preset")) {
      const auto preset = j["preset"].get<std::string>();
      const auto n = j.value("n_per_topic", std::size_t(100));
      const auto noise = j.value("noise_rate", 0.0);
      const auto vocab = j.value("vocab_per_topic", std::size_t(400));
      const auto vseed = j.value("vocab_seed", std::uint64_t(2023));
      SynthConfig c;
      if (preset == "news") c = news_shift_config(n, noise, vocab, vseed);
      else if (preset == "flip") c = flip_shift_config(n, noise, vocab, vseed);
      else throw Error("unknown synth preset '" + preset + "'");
      c.tokens_per_text = j.value("tokens_per_text", c.tokens_per_text);
      return c;
    }
    SynthConfig c;
    c.name = j.value("name", std::string("synth"));
    c.n_per_topic = j.at("n_per_topic").get<std::size_t>();
    c.tokens_per_text = j.value("tokens_per_text", std::size_t(16));
    c.noise_rate = j.value("noise_rate", 0.0);
    c.lang = j.value("lang", std::string("en"));
    c.pre_labels = LabelSet(j.at("pre_labels").get<std::vector<std::string>>());
    c.post_labels = LabelSet(j.at("post_labels").get<std::vector<std::string>>());
    for (const auto& t : j.at("topics")) {
      c.topics.push_back({t.at("name").get<std::string>(), t.at("vocabulary").get<std::vector<std::string>>(),
                          t.at("pre_label").get<std::string>()});
    }
    c.shift = shift_spec_from_json(j.at("shift"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad synth config: ") + e.what());
  }
}

}  // namespace conshift
