// conshift command line: data preparation, single-method training, scoring
// and the experiment matrix.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "conshift/baselines.hpp"
#include "conshift/corpus.hpp"
#include "conshift/entail.hpp"
#include "conshift/eval_stats.hpp"
#include "conshift/harness.hpp"
#include "conshift/model.hpp"
#include "conshift/prompt_catalog.hpp"

namespace cs = conshift;

namespace {

constexpr int kExitCellFailure = 1;
constexpr int kExitError = 2;

int cmd_synth(const std::string& preset, const std::string& config_path, std::size_t per_topic, double noise,
              std::uint64_t seed, const std::string& out) {
  cs::SynthConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw cs::Error("cannot open synth config: " + config_path);
    cfg = cs::synth_config_from_json(nlohmann::json::parse(in));
  } else if (preset == "news") {
    cfg = cs::news_shift_config(per_topic, noise);
  } else if (preset == "flip") {
    cfg = cs::flip_shift_config(per_topic, noise);
  } else {
    throw cs::Error("unknown synth preset '" + preset + "' (news, flip)");
  }
  const auto d = cs::synth_generate(cfg, seed);
  cs::save_dataset(out, d);
  std::cerr << "wrote " << d.size() << " examples to " << out << '\n';
  return 0;
}

int cmd_simulate_shift(const std::string& in, const std::string& spec, const std::string& out) {
  const auto d = cs::load_dataset(in);
  const auto shifted = cs::apply_shift(d, cs::load_shift_spec(spec));
  cs::save_dataset(out, shifted);
  std::size_t changed = 0;
  for (const auto& e : shifted.examples) changed += e.pre_label != e.post_label;
  std::cerr << "relabelled " << changed << " of " << shifted.size() << " examples\n";
  return 0;
}

int cmd_augment(const std::string& in, const std::string& catalog, const std::string& mode, bool oversample,
                bool random_labels, std::uint64_t seed, const std::string& out) {
  const auto d = cs::load_dataset(in);
  auto c = cs::load_catalog(catalog);
  if (random_labels) c = cs::randomize_labels(c, d.post_labels, cs::decoys_for(d.post_labels), seed);
  const auto aug = cs::augment_dataset(d, c, cs::concat_mode_from_string(mode), oversample, seed);
  cs::export_augmented(aug, out);
  std::cerr << "wrote " << aug.samples.size() << " samples to " << out << '\n';
  return 0;
}

struct TrainArgs {
  std::string method;
  std::string pre_train, train, test;
  std::string catalog = "en-news";
  std::string mode = "single";
  std::string prompts = "informative";
  bool oversample = false;
  std::string config;
  std::size_t epochs = 0;
  double lr = 0.0;
  std::size_t batch = 0;
  double l2 = -1.0;
  std::size_t pre_epochs = 0;
  bool pre_epochs_set = false;
  std::uint64_t seed = 0;
  std::string pred;
  std::string save_model;
};

int cmd_train(TrainArgs a) {
  cs::MethodSpec spec;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw cs::Error("cannot open method config: " + a.config);
    spec = cs::method_spec_from_json(nlohmann::json::parse(in));
  } else {
    spec.kind = cs::method_kind_from_string(a.method);
    spec.catalog = a.catalog;
    spec.mode = cs::concat_mode_from_string(a.mode);
    spec.oversample = a.oversample;
    if (a.prompts == "random") spec.prompt_variant = cs::PromptVariant::random;
    else if (a.prompts != "informative") throw cs::Error("--prompts must be informative or random");
  }
  if (a.epochs) spec.train.epochs = spec.pre_train.epochs = a.epochs;
  if (a.lr > 0) spec.train.learning_rate = spec.pre_train.learning_rate = a.lr;
  if (a.batch) spec.train.batch_size = spec.pre_train.batch_size = a.batch;
  if (a.l2 >= 0) spec.train.l2_penalty = spec.pre_train.l2_penalty = a.l2;
  if (a.pre_epochs_set) spec.pre_train.epochs = a.pre_epochs;

  const auto train = cs::load_dataset(a.train);
  const auto pre = a.pre_train.empty() ? train : cs::load_dataset(a.pre_train);
  const auto test = a.test.empty() ? train : cs::load_dataset(a.test);

  if (!a.save_model.empty()) {
    if (spec.kind != cs::MethodKind::entail) throw cs::Error("--save-model is supported for the entail method");
    const auto catalog = cs::resolve_catalog(spec, train.post_labels, cs::derive_seed(a.seed, "catalog"));
    const auto model = cs::train_entail(spec, train, catalog, a.seed);
    cs::save_model(a.save_model, model);
    std::cerr << "saved model to " << a.save_model << '\n';
  }
  const auto pred = cs::run_method(spec, pre, train, test, a.seed);
  if (!a.pred.empty()) cs::save_predictions(a.pred, pred, test.post_labels);
  const auto cm = cs::confusion(test, pred);
  std::printf("%s macro_f1 %.4f\n", spec.name().c_str(), 100.0 * cs::macro_f1(cm));
  return 0;
}

int cmd_score(const std::string& model_path, const std::string& in, const std::string& out) {
  const auto m = cs::load_model(model_path);
  const auto table = cs::self_score(m, cs::read_augmented(in));
  cs::write_scores(out, table);
  std::cerr << "wrote " << table.size() << " scores to " << out << '\n';
  return 0;
}

int cmd_predict(const std::string& scores, const std::string& data, const std::string& out) {
  const auto d = cs::load_dataset(data);
  const auto idx = cs::predict_from_scores(cs::import_scores(scores), d, d.post_labels);
  cs::Predictions p;
  for (std::size_t i = 0; i < d.size(); ++i) {
    p.ids.push_back(d.examples[i].id);
    p.labels.push_back(idx[i]);
  }
  cs::save_predictions(out, p, d.post_labels);
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gold, bool as_json) {
  const auto d = cs::load_dataset(gold);
  const auto cm = cs::confusion(d, cs::load_predictions(pred, d));
  const auto f1 = cm.per_class_f1();
  const double macro = cs::macro_f1(cm);
  if (as_json) {
    nlohmann::json j{{"macro_f1", macro}, {"accuracy", cm.accuracy()}, {"n", cm.total()}};
    for (std::size_t k = 0; k < f1.size(); ++k) j["per_class_f1"][d.post_labels[k]] = f1[k];
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("macro_f1 %.4f\naccuracy %.4f\n", 100.0 * macro, 100.0 * cm.accuracy());
    for (std::size_t k = 0; k < f1.size(); ++k) std::printf("f1 %s %.4f\n", d.post_labels[k].c_str(), 100.0 * f1[k]);
  }
  return 0;
}

int cmd_experiment(const std::string& config, std::size_t workers, const std::string& out) {
  auto cfg = cs::load_experiment_config(config);
  if (!out.empty()) cfg.output_dir = out;
  const auto r = cs::run_experiment(cfg, workers);
  cs::save_result(r, cfg.output_dir);
  cs::emit_report(r, cfg.output_dir);
  std::size_t failed = 0;
  for (const auto& s : r.grid) {
    if (!s.ok) {
      ++failed;
      std::cerr << "cell failed: " << s.method << " N=" << s.budget << " seed=" << s.seed_index << ": " << s.error
                << '\n';
    }
  }
  std::cout << cs::markdown_table(r);
  std::cerr << r.grid.size() - failed << "/" << r.grid.size() << " cells ok; results in " << cfg.output_dir.string()
            << '\n';
  return failed ? kExitCellFailure : 0;
}

int cmd_report(const std::string& dir, const std::string& formats, const std::string& out) {
  const auto r = cs::load_result(dir);
  for (const auto& p : cs::emit_report(r, out.empty() ? dir : out, cs::report_formats_from_string(formats))) {
    std::cerr << "wrote " << p.string() << '\n';
  }
  return r.all_ok() ? 0 : kExitCellFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conshift: adapting text classifiers to sudden label shift"};
  app.set_version_flag("--version", std::string(cs::kVersion));
  app.require_subcommand(1);
  std::function<int()> action;

  {
    auto* c = app.add_subcommand("synth", "generate a synthetic shifted corpus");
    static std::string preset = "news", config, out;
    static std::size_t per_topic = 500;
    static double noise = 0.05;
    static std::uint64_t seed = 0;
    c->add_option("--preset", preset, "news or flip")->capture_default_str();
    c->add_option("--config", config, "synth config JSON (overrides --preset)");
    c->add_option("--per-topic", per_topic, "examples per topic")->capture_default_str();
    c->add_option("--noise", noise, "off-topic token rate")->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return cmd_synth(preset, config, per_topic, noise, seed, out); }; });
  }
  {
    auto* c = app.add_subcommand("simulate-shift", "relabel a dataset with a shift spec");
    static std::string in, spec, out;
    c->add_option("--in", in)->required();
    c->add_option("--spec", spec)->required();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return cmd_simulate_shift(in, spec, out); }; });
  }
  {
    auto* c = app.add_subcommand("augment", "export entailment samples as JSONL");
    static std::string in, catalog, mode = "single", out;
    static bool oversample = false, random_labels = false;
    static std::uint64_t seed = 0;
    c->add_option("--in", in)->required();
    c->add_option("--catalog", catalog, "built-in id or catalog JSON")->required();
    c->add_option("--mode", mode, "single or two")->capture_default_str();
    c->add_flag("--oversample", oversample, "add one span-deleted positive per example");
    c->add_flag("--random-labels", random_labels, "replace label surfaces with decoy words");
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return cmd_augment(in, catalog, mode, oversample, random_labels, seed, out); }; });
  }
  {
    auto* c = app.add_subcommand("train", "train one method and predict a test set");
    static TrainArgs a;
    c->add_option("--method", a.method, "majority, pre_shift_only, finetuned, finetuned_post_only, l1l2, entail");
    c->add_option("--config", a.config, "method spec JSON instead of --method");
    c->add_option("--train", a.train, "post-shift training data")->required();
    c->add_option("--pre-train", a.pre_train, "pre-shift training data (default: --train)");
    c->add_option("--test", a.test, "evaluation data (default: --train)");
    c->add_option("--catalog", a.catalog)->capture_default_str();
    c->add_option("--mode", a.mode)->capture_default_str();
    c->add_option("--prompts", a.prompts, "informative or random")->capture_default_str();
    c->add_flag("--oversample", a.oversample);
    c->add_option("--epochs", a.epochs);
    c->add_option("--lr", a.lr);
    c->add_option("--batch", a.batch);
    c->add_option("--l2", a.l2);
    auto* pe = c->add_option("--pre-epochs", a.pre_epochs, "pre-shift stage epochs (0 skips it)");
    c->add_option("--seed", a.seed)->capture_default_str();
    c->add_option("--pred", a.pred, "write predictions JSONL");
    c->add_option("--save-model", a.save_model, "save the entailment model");
    c->callback([&, pe] {
      if (a.method.empty() == a.config.empty()) throw CLI::ValidationError("train", "give exactly one of --method, --config");
      a.pre_epochs_set = pe->count() > 0;
      action = [] { return cmd_train(a); };
    });
  }
  {
    auto* c = app.add_subcommand("score", "score exported entailment samples with a saved model");
    static std::string model, in, out;
    c->add_option("--model", model)->required();
    c->add_option("--in", in)->required();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return cmd_score(model, in, out); }; });
  }
  {
    auto* c = app.add_subcommand("predict", "turn a scores file into predictions");
    static std::string scores, data, out;
    c->add_option("--scores", scores)->required();
    c->add_option("--data", data)->required();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return cmd_predict(scores, data, out); }; });
  }
  {
    auto* c = app.add_subcommand("eval", "macro-F1 of a predictions file");
    static std::string pred, gold;
    static bool as_json = false;
    c->add_option("--pred", pred)->required();
    c->add_option("--gold", gold)->required();
    c->add_flag("--json", as_json);
    c->callback([&] { action = [] { return cmd_eval(pred, gold, as_json); }; });
  }
  {
    auto* c = app.add_subcommand("experiment", "run a method x budget x seed matrix");
    static std::string config, out;
    static std::size_t workers = cs::default_workers();
    c->add_option("--config", config)->required();
    c->add_option("--workers", workers, "parallel cells (default $CONSHIFT_WORKERS or 1)")->capture_default_str();
    c->add_option("--out", out, "output directory (overrides the config)");
    c->callback([&] { action = [] { return cmd_experiment(config, workers, out); }; });
  }
  {
    auto* c = app.add_subcommand("report", "render tables from a result directory");
    static std::string dir, formats = "md,csv", out;
    c->add_option("--result", dir)->required();
    c->add_option("--format", formats)->capture_default_str();
    c->add_option("--out", out, "output directory (default: --result)");
    c->callback([&] { action = [] { return cmd_report(dir, formats, out); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitError;
  }
  try {
    return action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}
