#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conshift/common.hpp"
#include "conshift/corpus.hpp"

namespace conshift {

/// K x K counts indexed (gold, predicted).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(LabelSet labels)
      : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

  ConfusionMatrix(LabelSet labels, std::span<const std::size_t> gold, std::span<const std::size_t> predicted)
      : ConfusionMatrix(std::move(labels)) {
    if (gold.size() != predicted.size()) throw Error("gold and predicted sequences differ in length");
    for (std::size_t i = 0; i < gold.size(); ++i) add(gold[i], predicted[i]);
  }

  void add(std::size_t gold, std::size_t predicted, std::size_t times = 1) {
    const std::size_t k = labels_.size();
    if (gold >= k || predicted >= k) throw Error("label index out of range for confusion matrix");
    counts_[gold * k + predicted] += times;
    total_ += times;
  }

  std::size_t operator()(std::size_t gold, std::size_t predicted) const {
    return counts_.at(gold * labels_.size() + predicted);
  }
  std::size_t size() const { return labels_.size(); }
  std::size_t total() const { return total_; }
  const LabelSet& labels() const { return labels_; }

  /// F1 = 2 TP / (2 TP + FP + FN); 0 when TP == 0, which also covers classes
  /// with no support and no predictions.
  std::vector<double> per_class_f1() const {
    const std::size_t k = labels_.size();
    std::vector<double> f1(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t tp = (*this)(c, c), fp = 0, fn = 0;
      for (std::size_t o = 0; o < k; ++o) {
        if (o == c) continue;
        fp += (*this)(o, c);
        fn += (*this)(c, o);
      }
      if (tp > 0) f1[c] = 2.0 * double(tp) / double(2 * tp + fp + fn);
    }
    return f1;
  }

  double accuracy() const {
    if (total_ == 0) throw Error("accuracy of an empty confusion matrix");
    std::size_t hit = 0;
    for (std::size_t c = 0; c < labels_.size(); ++c) hit += (*this)(c, c);
    return double(hit) / double(total_);
  }

 private:
  LabelSet labels_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
};

/// Unweighted mean of per-class F1 over every label of the set.
inline double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("macro-F1 of an empty confusion matrix");
  const auto f1 = cm.per_class_f1();
  double s = 0.0;
  for (double v : f1) s += v;
  return s / double(f1.size());
}

struct RunScore {
  std::string method;
  std::string budget;  // "10", "100", ..., "full"
  std::size_t seed_index = 0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  bool ok = true;
  std::string error;
};

inline RunScore make_run_score(std::string method, std::string budget, std::size_t seed_index,
                               const ConfusionMatrix& cm) {
  RunScore r;
  r.method = std::move(method);
  r.budget = std::move(budget);
  r.seed_index = seed_index;
  r.per_class_f1 = cm.per_class_f1();
  r.macro_f1 = macro_f1(cm);
  return r;
}

struct Aggregate {
  double mean = 0.0;
  std::optional<double> std;  // undefined for a single run
  std::size_t n = 0;
};

/// Mean and sample (n - 1) standard deviation, via Welford's update.
inline Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw Error("cannot aggregate an empty group");
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : values) {
    ++n;
    const double d = x - mean;
    mean += d / double(n);
    m2 += d * (x - mean);
  }
  Aggregate a;
  a.mean = mean;
  a.n = n;
  if (n >= 2) a.std = std::sqrt(std::max(0.0, m2 / double(n - 1)));
  return a;
}

using GroupKey = std::pair<std::string, std::string>;  // (method, budget)

/// Aggregates successful runs per (method, budget).
inline std::map<GroupKey, Aggregate> aggregate_groups(std::span<const RunScore> scores) {
  std::map<GroupKey, std::vector<double>> groups;
  for (const auto& s : scores) {
    if (s.ok) groups[{s.method, s.budget}].push_back(s.macro_f1);
  }
  std::map<GroupKey, Aggregate> out;
  for (const auto& [key, vals] : groups) out[key] = aggregate(vals);
  return out;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

struct MannWhitney {
  double u = 0.0;  // U statistic of the first sample
  double p_two_sided = 1.0;
  bool exact = false;
};

inline constexpr std::size_t kExactMannWhitneyLimit = 12;

namespace detail {

/// Midranks (1-based) of the pooled sample a ++ b.
inline std::vector<double> midranks(std::span<const double> a, std::span<const double> b) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t i = 0; i < a.size(); ++i) pooled.emplace_back(a[i], i);
  for (std::size_t i = 0; i < b.size(); ++i) pooled.emplace_back(b[i], a.size() + i);
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> rank(pooled.size());
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid = 0.5 * double(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) rank[pooled[t].second] = mid;
    i = j;
  }
  return rank;
}

inline void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error("Mann-Whitney U needs two non-empty samples");
  for (auto s : {a, b}) {
    for (double v : s) {
      if (!std::isfinite(v)) throw Error("Mann-Whitney U samples must be finite");
    }
  }
}

inline double u_statistic(const std::vector<double>& rank, std::size_t na) {
  double r = 0.0;
  for (std::size_t i = 0; i < na; ++i) r += rank[i];
  return r - double(na) * double(na + 1) / 2.0;
}

}  // namespace detail

/// Exact two-sided p: the share of all C(n, |a|) relabelings of the pooled
/// midranks whose U lies at least as far from n_a n_b / 2 as the observed U.
inline MannWhitney mann_whitney_u_exact(std::span<const double> a, std::span<const double> b) {
  detail::check_samples(a, b);
  const std::size_t na = a.size(), n = a.size() + b.size();
  if (n > 20) throw Error("exact Mann-Whitney enumeration is limited to 20 pooled values");
  const auto rank = detail::midranks(a, b);
  const double mu = double(na) * double(b.size()) / 2.0;
  MannWhitney r;
  r.exact = true;
  r.u = detail::u_statistic(rank, na);
  const double observed = std::abs(r.u - mu) - 1e-9;
  std::uint64_t hits = 0, total = 0;
  const double offset = double(na) * double(na + 1) / 2.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::size_t(std::popcount(mask)) != na) continue;
    double rs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) rs += rank[i];
    }
    ++total;
    if (std::abs(rs - offset - mu) >= observed) ++hits;
  }
  r.p_two_sided = double(hits) / double(total);
  return r;
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
inline MannWhitney mann_whitney_u_normal(std::span<const double> a, std::span<const double> b) {
  detail::check_samples(a, b);
  const double na = double(a.size()), nb = double(b.size()), n = na + nb;
  const auto rank = detail::midranks(a, b);
  MannWhitney r;
  r.u = detail::u_statistic(rank, a.size());
  std::vector<double> sorted = rank;
  std::sort(sorted.begin(), sorted.end());
  double tie_sum = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = double(j - i);
    tie_sum += t * t * t - t;
    i = j;
  }
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
  if (!(var > 0.0)) {
    r.p_two_sided = 1.0;
    return r;
  }
  const double mu = na * nb / 2.0;
  const double z = std::max(0.0, std::abs(r.u - mu) - 0.5) / std::sqrt(var);
  r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

/// Exact enumeration when |a| + |b| <= 12, normal approximation otherwise.
inline MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.size() + b.size() <= kExactMannWhitneyLimit) return mann_whitney_u_exact(a, b);
  return mann_whitney_u_normal(a, b);
}

}  // namespace conshift
