#pragma once

// Experiment matrix: methods x few-shot budgets x seeds. Every cell draws its
// few-shot training sample, runs one method and scores it on a fixed test
// set. Cell RNG streams derive from (master_seed, method, budget, seed index).

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "conshift/baselines.hpp"
#include "conshift/common.hpp"
#include "conshift/corpus.hpp"
#include "conshift/eval_stats.hpp"

namespace conshift {

struct Budget {
  std::optional<std::size_t> n;  // empty: full training data

  std::string label() const { return n ? std::to_string(*n) : "full"; }
  bool operator==(const Budget&) const = default;
};

inline Budget budget_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "full") return {};
    try {
      return {std::size_t(std::stoull(s))};
    } catch (const std::exception&) {
      throw Error("budget must be a positive count or \"full\", got '" + s + "'");
    }
  }
  if (j.is_number_unsigned() || j.is_number_integer()) {
    const auto v = j.get<long long>();
    if (v < 1) throw Error("budget must be >= 1");
    return {std::size_t(v)};
  }
  throw Error("budget must be a positive count or \"full\"");
}

struct DataSource {
  // Either a synthetic corpus or files.
  std::optional<SynthConfig> synth;
  std::uint64_t synth_seed = 0;
  std::optional<std::filesystem::path> data;   // split into train/test
  std::optional<std::filesystem::path> train;  // used with `test`
  std::optional<std::filesystem::path> test;
  double test_fraction = 0.25;
  bool rebalance_test = true;
  std::uint64_t split_seed = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataSource source;
  std::vector<MethodSpec> methods;
  std::vector<Budget> budgets;
  std::size_t num_seeds = 5;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir = "results";
  nlohmann::json raw;  // the parsed config, hashed for provenance
};

inline void validate(const ExperimentConfig& c) {
  if (c.methods.empty()) throw Error("experiment config lists no methods");
  if (c.budgets.empty()) throw Error("experiment config lists no budgets");
  if (c.num_seeds == 0) throw Error("experiment config needs at least one seed");
  std::set<std::string> names;
  for (const auto& m : c.methods) {
    if (!names.insert(m.name()).second) throw Error("duplicate method id '" + m.name() + "'");
  }
  const auto& s = c.source;
  const int kinds = int(s.synth.has_value()) + int(s.data.has_value()) + int(s.train.has_value() || s.test.has_value());
  if (kinds != 1) throw Error("data source must be exactly one of: synth, data, train+test");
  if ((s.train.has_value()) != (s.test.has_value())) throw Error("data source needs both train and test files");
}

/// Config file layout:
///   {"name", "master_seed", "seeds": 5, "budgets": [10, 100, 1000, "full"],
///    "output_dir",
///    "data": {"synth": {...} | "path": FILE | "train": FILE, "test": FILE,
///             "synth_seed", "test_fraction", "rebalance_test", "split_seed"},
///    "defaults": {"train": {...}, "pre_train": {...}, "featurizer": {...}},
///    "methods": [{"id", "kind", ...}, ...]}
/// Relative paths resolve against `base_dir`.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    const std::filesystem::path& base_dir = ".") {
  try {
    ExperimentConfig c;
    c.raw = j;
    c.name = j.value("name", c.name);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("seeds")) {
      if (j["seeds"].is_array()) c.num_seeds = j["seeds"].size();
      else c.num_seeds = j["seeds"].get<std::size_t>();
    }
    for (const auto& b : j.at("budgets")) c.budgets.push_back(budget_from_json(b));
    if (j.contains("output_dir")) c.output_dir = base_dir / j["output_dir"].get<std::string>();

    auto resolve = [&](const nlohmann::json& v) { return base_dir / v.get<std::string>(); };
    const auto& d = j.at("data");
    if (d.contains("synth")) c.source.synth = synth_config_from_json(d["synth"]);
    if (d.contains("path")) c.source.data = resolve(d["path"]);
    if (d.contains("train")) c.source.train = resolve(d["train"]);
    if (d.contains("test")) c.source.test = resolve(d["test"]);
    c.source.synth_seed = d.value("synth_seed", c.source.synth_seed);
    c.source.test_fraction = d.value("test_fraction", c.source.test_fraction);
    c.source.rebalance_test = d.value("rebalance_test", c.source.rebalance_test);
    c.source.split_seed = d.value("split_seed", c.source.split_seed);

    MethodSpec defaults;
    if (j.contains("defaults")) {
      const auto& dj = j["defaults"];
      if (dj.contains("train")) defaults.train = train_config_from_json(dj["train"], defaults.train);
      if (dj.contains("pre_train")) defaults.pre_train = train_config_from_json(dj["pre_train"], defaults.pre_train);
      else defaults.pre_train = defaults.train;
      if (dj.contains("featurizer")) defaults.featurizer = featurizer_from_json(dj["featurizer"]);
    }
    for (const auto& m : j.at("methods")) {
      MethodSpec spec = method_spec_from_json(m, defaults);
      if (spec.catalog.find('/') != std::string::npos || spec.catalog.ends_with(".json")) {
        spec.catalog = (base_dir / spec.catalog).string();
      }
      c.methods.push_back(std::move(spec));
    }
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open experiment config: " + path.string());
  try {
    return experiment_config_from_json(nlohmann::json::parse(in), path.parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad experiment config " + path.string() + ": " + e.what());
  }
}

struct Significance {
  std::string budget;
  std::string best_method;
  std::string other_method;
  double u = 0.0;
  double p = 1.0;
  bool significant = false;  // p < 0.05
};

struct ExperimentResult {
  std::string name;
  std::vector<std::string> methods;  // config order
  std::vector<std::string> budgets;  // config order
  std::size_t num_seeds = 0;
  LabelSet labels;
  std::vector<RunScore> grid;  // method-major, then budget, then seed
  std::map<GroupKey, Aggregate> aggregates;
  std::vector<Significance> significance;
  std::string config_hash;
  std::string version = kVersion;

  bool all_ok() const {
    return std::all_of(grid.begin(), grid.end(), [](const RunScore& r) { return r.ok; });
  }
};

inline constexpr double kSignificanceLevel = 0.05;

struct PreparedData {
  Dataset train;
  Dataset test;
};

inline PreparedData prepare_data(const DataSource& s) {
  if (s.train) {
    PreparedData p{load_dataset(*s.train), load_dataset(*s.test)};
    if (s.rebalance_test) p.test = rebalance(p.test, s.split_seed);
    return p;
  }
  const Dataset all = s.synth ? synth_generate(*s.synth, s.synth_seed) : load_dataset(*s.data);
  auto [train, test] = split(all, s.test_fraction, s.split_seed);
  if (s.rebalance_test) test = rebalance(test, s.split_seed);
  return {std::move(train), std::move(test)};
}

/// Each method against the best-mean method of its budget.
inline std::vector<Significance> significance_tests(const ExperimentResult& r) {
  std::vector<Significance> out;
  for (const auto& b : r.budgets) {
    std::optional<std::string> best;
    double best_mean = -1.0;
    for (const auto& m : r.methods) {
      const auto it = r.aggregates.find({m, b});
      if (it != r.aggregates.end() && it->second.mean > best_mean) {
        best_mean = it->second.mean;
        best = m;
      }
    }
    if (!best) continue;
    auto scores_of = [&](const std::string& m) {
      std::vector<double> v;
      for (const auto& s : r.grid) {
        if (s.ok && s.method == m && s.budget == b) v.push_back(s.macro_f1);
      }
      return v;
    };
    const auto best_scores = scores_of(*best);
    for (const auto& m : r.methods) {
      if (m == *best) continue;
      const auto other = scores_of(m);
      if (other.empty() || best_scores.empty()) continue;
      const auto t = mann_whitney_u(best_scores, other);
      out.push_back({b, *best, m, t.u, t.p_two_sided, t.p_two_sided < kSignificanceLevel});
    }
  }
  return out;
}

/// Default worker count: $CONSHIFT_WORKERS, else 1.
inline std::size_t default_workers() {
  if (const char* v = std::getenv("CONSHIFT_WORKERS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n > 0) return std::size_t(n);
  }
  return 1;
}

/// Runs every cell. Failures are recorded in the cell (ok == false, error set)
/// and do not stop the run.
inline ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t workers = default_workers(),
                                       const PreparedData* prepared = nullptr) {
  validate(config);
  std::optional<PreparedData> owned;
  if (prepared == nullptr) {
    owned = prepare_data(config.source);
    prepared = &*owned;
  }
  const Dataset& train = prepared->train;
  const Dataset& test = prepared->test;

  ExperimentResult r;
  r.name = config.name;
  r.num_seeds = config.num_seeds;
  r.labels = test.post_labels;
  for (const auto& m : config.methods) r.methods.push_back(m.name());
  for (const auto& b : config.budgets) r.budgets.push_back(b.label());
  r.config_hash = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.raw.dump())));
    return std::string(buf);
  }();

  struct Cell {
    std::size_t method, budget, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    for (std::size_t b = 0; b < config.budgets.size(); ++b) {
      for (std::size_t s = 0; s < config.num_seeds; ++s) cells.push_back({m, b, s});
    }
  }
  r.grid.resize(cells.size());

  auto run_cell = [&](std::size_t i) {
    const auto& c = cells[i];
    const auto& spec = config.methods[c.method];
    const auto& budget = config.budgets[c.budget];
    RunScore& out = r.grid[i];
    out.method = spec.name();
    out.budget = budget.label();
    out.seed_index = c.seed;
    try {
      // Same sample for every method and budget of a seed; budgets nest.
      const std::uint64_t sample_seed = derive_seed(config.master_seed, "fewshot", std::to_string(c.seed));
      const Dataset post = budget.n ? fewshot_sample(train, *budget.n, sample_seed) : train;
      const std::uint64_t cell_seed =
          derive_seed(config.master_seed, spec.name(), budget.label(), std::to_string(c.seed));
      const Predictions pred = run_method(spec, train, post, test, cell_seed);
      const auto cm = confusion(test, pred);
      out.macro_f1 = macro_f1(cm);
      out.per_class_f1 = cm.per_class_f1();
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
      out.per_class_f1.assign(test.post_labels.size(), 0.0);
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, cells.size()));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  r.aggregates = aggregate_groups(r.grid);
  r.significance = significance_tests(r);
  return r;
}

// ---------------------------------------------------------------------------
// Serialization and reports

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_percent(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& s : r.grid) {
    nlohmann::json g{{"method", s.method}, {"budget", s.budget},       {"seed", s.seed_index},
                     {"ok", s.ok},         {"macro_f1", s.macro_f1}, {"per_class_f1", s.per_class_f1}};
    if (!s.ok) g["error"] = s.error;
    grid.push_back(std::move(g));
  }
  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& [key, a] : r.aggregates) {
    aggs.push_back({{"method", key.first},
                    {"budget", key.second},
                    {"mean", a.mean},
                    {"std", a.std ? nlohmann::json(*a.std) : nlohmann::json(nullptr)},
                    {"n", a.n}});
  }
  nlohmann::json sig = nlohmann::json::array();
  for (const auto& s : r.significance) {
    sig.push_back({{"budget", s.budget},
                   {"best", s.best_method},
                   {"other", s.other_method},
                   {"u", s.u},
                   {"p", s.p},
                   {"significant", s.significant}});
  }
  return {{"name", r.name},
          {"methods", r.methods},
          {"budgets", r.budgets},
          {"seeds", r.num_seeds},
          {"labels", r.labels.names()},
          {"grid", grid},
          {"aggregates", aggs},
          {"significance", sig},
          {"provenance", {{"config_hash", r.config_hash}, {"version", r.version}}}};
}

inline ExperimentResult experiment_result_from_json(const nlohmann::json& j) {
  try {
    ExperimentResult r;
    r.name = j.at("name").get<std::string>();
    r.methods = j.at("methods").get<std::vector<std::string>>();
    r.budgets = j.at("budgets").get<std::vector<std::string>>();
    r.num_seeds = j.at("seeds").get<std::size_t>();
    r.labels = LabelSet(j.at("labels").get<std::vector<std::string>>());
    for (const auto& g : j.at("grid")) {
      RunScore s;
      s.method = g.at("method").get<std::string>();
      s.budget = g.at("budget").get<std::string>();
      s.seed_index = g.at("seed").get<std::size_t>();
      s.ok = g.at("ok").get<bool>();
      s.macro_f1 = g.at("macro_f1").get<double>();
      s.per_class_f1 = g.at("per_class_f1").get<std::vector<double>>();
      s.error = g.value("error", std::string());
      r.grid.push_back(std::move(s));
    }
    r.aggregates = aggregate_groups(r.grid);
    r.significance = significance_tests(r);
    r.config_hash = j.at("provenance").at("config_hash").get<std::string>();
    r.version = j.at("provenance").at("version").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad experiment result: ") + e.what());
  }
}

/// Raw grid: method,N,seed,macro_f1,f1_<label>...,status
inline std::string grid_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "method,N,seed,macro_f1";
  for (const auto& l : r.labels.names()) out << ",f1_" << detail::csv_escape(l);
  out << ",status\n";
  for (const auto& s : r.grid) {
    out << detail::csv_escape(s.method) << ',' << s.budget << ',' << s.seed_index << ','
        << detail::fmt_double(s.macro_f1);
    for (double f : s.per_class_f1) out << ',' << detail::fmt_double(f);
    out << ',' << (s.ok ? "ok" : "failed") << '\n';
  }
  return out.str();
}

/// Parses a grid CSV back into run scores.
inline std::vector<RunScore> parse_grid_csv(std::istream& in) {
  const auto rows = detail::parse_csv(in);
  if (rows.empty()) throw Error("empty grid CSV");
  const auto& header = rows.front().second;
  if (header.size() < 5 || header[0] != "method" || header[3] != "macro_f1") throw Error("not a grid CSV");
  const std::size_t n_labels = header.size() - 5;
  std::vector<RunScore> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].second;
    if (f.size() != header.size()) throw Error("grid CSV line " + std::to_string(rows[i].first) + ": wrong field count");
    RunScore s;
    s.method = f[0];
    s.budget = f[1];
    s.seed_index = std::stoull(f[2]);
    s.macro_f1 = std::stod(f[3]);
    for (std::size_t k = 0; k < n_labels; ++k) s.per_class_f1.push_back(std::stod(f[4 + k]));
    s.ok = f.back() == "ok";
    out.push_back(std::move(s));
  }
  return out;
}

/// Markdown table in mean(std) percent, methods as rows and budgets as
/// columns. Per column the best mean is bold and the second best underlined.
inline std::string markdown_table(const ExperimentResult& r) {
  std::ostringstream out;
  out << "| Model |";
  for (const auto& b : r.budgets) out << (b == "full" ? " Full Data |" : " N = " + b + " |");
  out << "\n|---|";
  for (std::size_t i = 0; i < r.budgets.size(); ++i) out << "---|";
  out << '\n';

  std::map<GroupKey, int> rank;  // 1 best, 2 second
  for (const auto& b : r.budgets) {
    std::vector<std::pair<double, std::size_t>> col;
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
      const auto it = r.aggregates.find({r.methods[m], b});
      if (it != r.aggregates.end()) col.emplace_back(it->second.mean, m);
    }
    std::stable_sort(col.begin(), col.end(), [](const auto& a, const auto& c) { return a.first > c.first; });
    for (std::size_t i = 0; i < col.size() && i < 2; ++i) rank[{r.methods[col[i].second], b}] = int(i) + 1;
  }

  for (const auto& m : r.methods) {
    out << "| " << m << " |";
    for (const auto& b : r.budgets) {
      const auto it = r.aggregates.find({m, b});
      if (it == r.aggregates.end()) {
        out << " failed |";
        continue;
      }
      std::string cell = detail::fmt_percent(it->second.mean) + "(" +
                         (it->second.std ? detail::fmt_percent(*it->second.std) : std::string("n/a")) + ")";
      const auto rk = rank.find({m, b});
      if (rk != rank.end() && rk->second == 1) cell = "**" + cell + "**";
      else if (rk != rank.end() && rk->second == 2) cell = "<u>" + cell + "</u>";
      out << ' ' << cell << " |";
    }
    out << '\n';
  }
  return out.str();
}

inline std::string series_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "method,N,mean,std,n\n";
  for (const auto& m : r.methods) {
    for (const auto& b : r.budgets) {
      const auto it = r.aggregates.find({m, b});
      if (it == r.aggregates.end()) continue;
      out << detail::csv_escape(m) << ',' << b << ',' << detail::fmt_double(it->second.mean) << ','
          << (it->second.std ? detail::fmt_double(*it->second.std) : std::string()) << ',' << it->second.n << '\n';
    }
  }
  return out.str();
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace detail

/// Writes result.json and grid.csv.
inline void save_result(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  detail::write_text(dir / "result.json", to_json(r).dump(2) + "\n");
  detail::write_text(dir / "grid.csv", grid_csv(r));
}

inline ExperimentResult load_result(const std::filesystem::path& dir) {
  std::ifstream in(dir / "result.json");
  if (!in) throw Error("no result.json in " + dir.string());
  try {
    return experiment_result_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad result.json in " + dir.string() + ": " + e.what());
  }
}

struct ReportFormats {
  bool markdown = true;
  bool csv = true;
};

inline ReportFormats report_formats_from_string(std::string_view s) {
  ReportFormats f{false, false};
  std::string t(s);
  std::replace(t.begin(), t.end(), ',', ' ');
  for (const auto& part : split_whitespace(t)) {
    if (part == "md" || part == "markdown") f.markdown = true;
    else if (part == "csv") f.csv = true;
    else throw Error("unknown report format '" + part + "'");
  }
  if (!f.markdown && !f.csv) throw Error("no report format selected");
  return f;
}

/// report.md (table + significance), grid.csv and series.csv.
inline std::vector<std::filesystem::path> emit_report(const ExperimentResult& r, const std::filesystem::path& dir,
                                                      ReportFormats formats = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot write report to " + dir.string());
  std::vector<std::filesystem::path> written;
  if (formats.markdown) {
    std::ostringstream md;
    md << "# " << r.name << "\n\nMacro-averaged F1 (%), mean(std) over " << r.num_seeds
       << " seeds. Best per column in bold, second best underlined.\n\n"
       << markdown_table(r);
    if (!r.significance.empty()) {
      md << "\n## Mann-Whitney U against the best method per budget\n\n| N | best | other | U | p | p < 0.05 |\n|---|---|---|---|---|---|\n";
      for (const auto& s : r.significance) {
        char p[32];
        std::snprintf(p, sizeof p, "%.4g", s.p);
        md << "| " << s.budget << " | " << s.best_method << " | " << s.other_method << " | " << s.u << " | " << p
           << " | " << (s.significant ? "yes" : "no") << " |\n";
      }
    }
    std::size_t failed = 0;
    for (const auto& s : r.grid) failed += !s.ok;
    if (failed) md << "\n" << failed << " cell(s) failed; see result.json.\n";
    md << "\nconfig " << r.config_hash << ", conshift " << r.version << "\n";
    detail::write_text(dir / "report.md", md.str());
    written.push_back(dir / "report.md");
  }
  if (formats.csv) {
    detail::write_text(dir / "grid.csv", grid_csv(r));
    detail::write_text(dir / "series.csv", series_csv(r));
    written.push_back(dir / "grid.csv");
    written.push_back(dir / "series.csv");
  }
  return written;
}

}  // namespace conshift
