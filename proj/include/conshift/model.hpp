#pragma once

// Linear classifier over hashed features: a logistic head for the entailment
// task and a softmax head for direct K-way classification. Trained by seeded
// mini-batch gradient descent on mean cross-entropy plus (l2 / 2) * ||W||^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "conshift/common.hpp"
#include "conshift/features.hpp"

namespace conshift {

enum class Head { binary, multiclass };

inline constexpr int kModelFormatVersion = 1;

struct Model {
  Head head = Head::binary;
  std::size_t outputs = 1;  // 1 for binary, K for multiclass
  FeaturizerConfig featurizer;
  std::vector<double> weights;  // outputs x dim, row-major
  std::vector<double> bias;     // outputs
  std::vector<double> train_log;

  static Model zeros(Head head, std::size_t num_classes, const FeaturizerConfig& f) {
    validate(f);
    Model m;
    m.head = head;
    if (head == Head::binary) {
      m.outputs = 1;
    } else {
      if (num_classes < 2) throw Error("multiclass head needs at least 2 classes");
      m.outputs = num_classes;
    }
    m.featurizer = f;
    m.weights.assign(m.outputs * f.dim, 0.0);
    m.bias.assign(m.outputs, 0.0);
    return m;
  }

  std::size_t dim() const { return featurizer.dim; }
  std::size_t num_classes() const { return head == Head::binary ? 2 : outputs; }

  double logit(std::size_t k, const SparseVector& x) const {
    const double* w = weights.data() + k * dim();
    double z = bias[k];
    for (std::size_t i = 0; i < x.nnz(); ++i) z += w[x.index[i]] * x.value[i];
    return z;
  }

  bool finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    return std::all_of(weights.begin(), weights.end(), ok) && std::all_of(bias.begin(), bias.end(), ok);
  }
};

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1.0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double l2_penalty = 1e-6;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw Error("epochs must be >= 1");
  if (c.batch_size < 1) throw Error("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (!(c.l2_penalty >= 0.0)) throw Error("l2_penalty must be non-negative");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"l2_penalty", c.l2_penalty}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  base.epochs = j.value("epochs", base.epochs);
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.seed = j.value("seed", base.seed);
  base.l2_penalty = j.value("l2_penalty", base.l2_penalty);
  return base;
}

/// One training example. `targets` holds one label for the ordinary losses
/// and two (pre, post) for the joint loss; the loss is the sum of the
/// cross-entropies against every target. Binary targets are 0 or 1.
struct Sample {
  SparseVector x;
  std::vector<std::size_t> targets;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) s += (p[k] = std::exp(logits[k] - mx));
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> logits(const Model& m, const SparseVector& x) {
  std::vector<double> z(m.outputs);
  for (std::size_t k = 0; k < m.outputs; ++k) z[k] = m.logit(k, x);
  return z;
}

/// Binary head: P(label = 1). Multiclass head: use score_vector.
inline double score(const Model& m, const SparseVector& x) {
  if (m.head != Head::binary) throw Error("score() needs a binary head; use score_vector()");
  return sigmoid(m.logit(0, x));
}

inline std::vector<double> score_vector(const Model& m, const SparseVector& x) {
  if (m.head == Head::binary) {
    const double p = sigmoid(m.logit(0, x));
    return {1.0 - p, p};
  }
  const auto z = logits(m, x);
  return softmax(z);
}

inline std::size_t predict_class(const Model& m, const SparseVector& x) {
  const auto p = score_vector(m, x);
  return std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
}

namespace detail {

inline void check_targets(const Model& m, const Sample& s) {
  if (s.targets.empty()) throw Error("training sample has no target");
  for (auto t : s.targets) {
    if (t >= m.num_classes()) {
      throw Error("label index " + std::to_string(t) + " does not fit a head with " + std::to_string(m.num_classes()) +
                  " classes");
    }
  }
}

/// Data loss of one sample and d(loss)/d(logit_k) given logits z.
inline double loss_and_residual(const Model& m, std::span<const double> z, const Sample& s,
                                std::vector<double>& residual) {
  const double n_targets = double(s.targets.size());
  residual.assign(m.outputs, 0.0);
  double loss = 0.0;
  if (m.head == Head::binary) {
    const double p = sigmoid(z[0]);
    for (auto t : s.targets) {
      loss += softplus(z[0]) - (t == 1 ? z[0] : 0.0);
      residual[0] += p - (t == 1 ? 1.0 : 0.0);
    }
    return loss;
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double se = 0.0;
  for (double v : z) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  for (std::size_t k = 0; k < m.outputs; ++k) residual[k] = n_targets * std::exp(z[k] - lse);
  for (auto t : s.targets) {
    loss += lse - z[t];
    residual[t] -= 1.0;
  }
  return loss;
}

}  // namespace detail

inline double l2_term(const Model& m, double l2) {
  if (l2 == 0.0) return 0.0;
  double s = 0.0;
  for (double w : m.weights) s += w * w;
  return 0.5 * l2 * s;
}

/// Per-sample objective: summed cross-entropy over the sample's targets plus
/// the L2 term.
inline double sample_loss(const Model& m, const Sample& s, double l2) {
  detail::check_targets(m, s);
  std::vector<double> r;
  const auto z = logits(m, s.x);
  return detail::loss_and_residual(m, z, s, r) + l2_term(m, l2);
}

/// Mean objective over a sample set.
inline double mean_loss(const Model& m, std::span<const Sample> samples, double l2) {
  if (samples.empty()) return l2_term(m, l2);
  std::vector<double> r;
  double total = 0.0;
  for (const auto& s : samples) {
    const auto z = logits(m, s.x);
    total += detail::loss_and_residual(m, z, s, r);
  }
  return total / double(samples.size()) + l2_term(m, l2);
}

/// Analytic gradient of sample_loss w.r.t. weight (k, feature) or, when
/// `feature` is empty, bias k.
inline double analytic_gradient(const Model& m, const Sample& s, double l2, std::size_t k,
                                std::optional<std::uint32_t> feature) {
  std::vector<double> r;
  const auto z = logits(m, s.x);
  detail::loss_and_residual(m, z, s, r);
  if (!feature) return r[k];
  double g = l2 * m.weights[k * m.dim() + *feature];
  for (std::size_t i = 0; i < s.x.nnz(); ++i) {
    if (s.x.index[i] == *feature) g += r[k] * s.x.value[i];
  }
  return g;
}

/// Compares analytic gradients to central finite differences on at least 20
/// coordinates (the sample's active weights per output and the biases, topped
/// up with random weights). Returns the max of |a - n| / max(|a|, |n|, 1e-7).
inline double grad_check(const Model& model, const Sample& s, double epsilon, double l2 = 0.0,
                         std::uint64_t seed = 0, std::size_t min_coords = 20) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw Error("grad_check epsilon must lie in (0, 1e-3]");
  detail::check_targets(model, s);
  struct Coord {
    std::size_t k;
    std::optional<std::uint32_t> feature;
  };
  std::vector<Coord> coords;
  for (std::size_t k = 0; k < model.outputs; ++k) {
    coords.push_back({k, std::nullopt});
    for (auto idx : s.x.index) coords.push_back({k, idx});
  }
  Rng rng(derive_seed(seed, "grad-check"));
  rng.shuffle(coords);
  while (coords.size() < min_coords) {
    coords.push_back({std::size_t(rng.below(model.outputs)), std::uint32_t(rng.below(model.dim()))});
  }
  Model probe = model;
  double worst = 0.0;
  for (const auto& c : coords) {
    double& slot = c.feature ? probe.weights[c.k * probe.dim() + *c.feature] : probe.bias[c.k];
    const double saved = slot;
    slot = saved + epsilon;
    const double up = sample_loss(probe, s, l2);
    slot = saved - epsilon;
    const double down = sample_loss(probe, s, l2);
    slot = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = analytic_gradient(model, s, l2, c.k, c.feature);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

/// Mini-batch gradient descent. `warm_start` supplies initial parameters
/// (fine-tuning); otherwise training starts from zeros. The model's train_log
/// receives the full objective after every epoch.
inline Model train(std::span<const Sample> samples, const TrainConfig& config, Head head, std::size_t num_classes,
                   const FeaturizerConfig& featurizer, const Model* warm_start = nullptr) {
  validate(config);
  if (samples.empty()) throw Error("cannot train on an empty sample set");
  Model m = Model::zeros(head, num_classes, featurizer);
  if (warm_start != nullptr) {
    if (warm_start->head != head || warm_start->outputs != m.outputs || !(warm_start->featurizer == featurizer)) {
      throw Error("warm-start model does not match the requested head or featurizer");
    }
    m.weights = warm_start->weights;
    m.bias = warm_start->bias;
  }
  for (const auto& s : samples) detail::check_targets(m, s);

  const std::size_t dim = m.dim();
  // W = scale * V keeps the L2 shrink O(1) per batch.
  std::vector<double> v = m.weights;
  double scale = 1.0;
  const double shrink = 1.0 - config.learning_rate * config.l2_penalty;
  if (!(shrink > 0.0)) throw Error("learning_rate * l2_penalty must be < 1");

  Rng rng(derive_seed(config.seed, "train-shuffle"));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<std::vector<double>> residuals;
  std::vector<double> z(m.outputs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double step = config.learning_rate / double(end - start);
      residuals.resize(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = samples[order[b]];
        for (std::size_t k = 0; k < m.outputs; ++k) {
          const double* row = v.data() + k * dim;
          double acc = 0.0;
          for (std::size_t i = 0; i < s.x.nnz(); ++i) acc += row[s.x.index[i]] * s.x.value[i];
          z[k] = scale * acc + m.bias[k];
        }
        detail::loss_and_residual(m, z, s, residuals[b - start]);
      }
      scale *= shrink;
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = samples[order[b]];
        const auto& r = residuals[b - start];
        for (std::size_t k = 0; k < m.outputs; ++k) {
          if (r[k] == 0.0) continue;
          double* row = v.data() + k * dim;
          const double coef = step * r[k] / scale;
          for (std::size_t i = 0; i < s.x.nnz(); ++i) row[s.x.index[i]] -= coef * s.x.value[i];
          m.bias[k] -= step * r[k];
        }
      }
      if (scale < 1e-9) {
        for (double& w : v) w *= scale;
        scale = 1.0;
      }
    }
    for (std::size_t i = 0; i < dim * m.outputs; ++i) m.weights[i] = scale * v[i];
    m.train_log.push_back(mean_loss(m, samples, config.l2_penalty));
  }
  if (!m.finite()) throw Error("training diverged (non-finite weights); lower the learning rate");
  return m;
}

/// Softmax head trained on the sum of the pre-shift and post-shift
/// cross-entropies against one shared prediction.
inline Model train_joint(std::span<const Sample> samples, const TrainConfig& config, std::size_t num_classes,
                         const FeaturizerConfig& featurizer) {
  for (const auto& s : samples) {
    if (s.targets.size() != 2) throw Error("joint training needs (pre, post) targets on every sample");
  }
  return train(samples, config, Head::multiclass, num_classes, featurizer);
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const Model& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < m.outputs; ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t i = 0; i < m.dim(); ++i) {
      const double w = m.weights[k * m.dim() + i];
      if (w != 0.0) row.push_back({i, w});
    }
    rows.push_back(std::move(row));
  }
  return {{"format", "conshift-model"},
          {"version", kModelFormatVersion},
          {"head", m.head == Head::binary ? "binary" : "multiclass"},
          {"outputs", m.outputs},
          {"featurizer", to_json(m.featurizer)},
          {"bias", m.bias},
          {"weights", rows},
          {"train_log", m.train_log}};
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != "conshift-model") throw Error("not a conshift model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error("model format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kModelFormatVersion) + ")");
    }
    const Head head = j.at("head").get<std::string>() == "binary" ? Head::binary : Head::multiclass;
    const auto outputs = j.at("outputs").get<std::size_t>();
    Model m = Model::zeros(head, head == Head::binary ? 2 : outputs, featurizer_from_json(j.at("featurizer")));
    m.bias = j.at("bias").get<std::vector<double>>();
    if (m.bias.size() != m.outputs) throw Error("model bias has the wrong arity");
    const auto& rows = j.at("weights");
    if (rows.size() != m.outputs) throw Error("model weights have the wrong arity");
    for (std::size_t k = 0; k < m.outputs; ++k) {
      for (const auto& e : rows[k]) {
        const auto i = e.at(0).get<std::size_t>();
        if (i >= m.dim()) throw Error("model weight index out of range");
        m.weights[k * m.dim() + i] = e.at(1).get<double>();
      }
    }
    m.train_log = j.value("train_log", std::vector<double>{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad model file: ") + e.what());
  }
}

inline void save_model(const std::filesystem::path& path, const Model& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model: " + path.string());
  out << to_json(m).dump() << '\n';
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model: " + path.string());
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad model file " + path.string() + ": " + e.what());
  }
}

}  // namespace conshift
