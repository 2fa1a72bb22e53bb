#include "advsep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace advsep {

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile rank must be in [0,100]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw std::invalid_argument("roc_auc needs positives and negatives");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(pos.size() + neg.size());
  for (double s : pos) items.push_back({s, true});
  for (double s : neg) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so it
  // stays integral.
  std::uint64_t rank_sum_x2 = 0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const std::uint64_t tied_rank_x2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (items[t].positive) rank_sum_x2 += tied_rank_x2;
    }
    i = j;
  }
  const std::uint64_t np = pos.size();
  const std::uint64_t nn = neg.size();
  const std::uint64_t u_x2 = rank_sum_x2 - np * (np + 1);
  return static_cast<double>(u_x2) / static_cast<double>(2 * np * nn);
}

ErocBreakdown eroc_breakdown(const std::vector<ClassScores>& per_class) {
  std::size_t total = 0;
  for (const auto& c : per_class) total += c.adv_count;
  if (total == 0) throw std::domain_error("EROC needs at least one adversarial example");
  ErocBreakdown out;
  for (const auto& c : per_class) {
    const double w = static_cast<double>(c.adv_count) / static_cast<double>(total);
    double auc = std::numeric_limits<double>::quiet_NaN();
    if (c.adv_count > 0) {
      auc = c.neg.empty() ? 0.5 : roc_auc(c.pos, c.neg);
      out.eroc += w * auc;
    }
    out.per_class_auc.push_back(auc);
    out.per_class_weight.push_back(w);
  }
  return out;
}

double eroc(const std::vector<ClassScores>& per_class) { return eroc_breakdown(per_class).eroc; }

double asr(std::span<const AsrSample> samples) {
  std::size_t eligible = 0;
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (!s.eligible) continue;
    ++eligible;
    hits += (s.fooled && s.evaded);
  }
  if (eligible == 0) throw std::domain_error("ASR undefined: no eligible examples");
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

double asr(const DetectorModel& det, const Dataset& test, const AttackFn& attack,
           const std::optional<Array>& eligibility_thresholds) {
  DetectorModel gate = det;
  if (eligibility_thresholds) gate.thresholds = *eligibility_thresholds;
  std::vector<AsrSample> samples;
  samples.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Array x = test.example(i);
    const std::size_t y = test.labels[i];
    AsrSample s;
    s.eligible = classify(det, x) == y && !is_detected(gate, x);
    if (s.eligible) {
      const AttackOutput out = attack(x, y, i);
      const std::size_t pred = classify(det, out.x_adv);
      s.fooled = out.target ? pred == *out.target : pred != y;
      s.evaded = !is_detected(det, out.x_adv);
    }
    samples.push_back(s);
  }
  return asr(samples);
}

double EvalReport::asr_at(double p) const {
  auto it = asr_by_p.find(p);
  if (it == asr_by_p.end()) throw std::out_of_range("no ASR recorded at p=" + std::to_string(p));
  return it->second;
}

EvalReport sweep_worst_case(const std::function<EvalReport(double alpha, std::size_t k)>& eval_fn,
                            const std::vector<double>& alpha_grid, std::size_t k_fixed) {
  if (alpha_grid.empty()) throw std::invalid_argument("alpha grid must not be empty");
  std::optional<EvalReport> worst;
  for (double alpha : alpha_grid) {
    EvalReport r = eval_fn(alpha, k_fixed);
    if (!worst) {
      worst = std::move(r);
      continue;
    }
    const double a = r.asr_by_p.empty() ? 0.0 : r.asr_by_p.begin()->second;
    const double b = worst->asr_by_p.empty() ? 0.0 : worst->asr_by_p.begin()->second;
    if (a > b || (a == b && r.eroc < worst->eroc)) worst = std::move(r);
  }
  return *worst;
}

}  // namespace advsep
