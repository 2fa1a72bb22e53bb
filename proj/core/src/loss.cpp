#include "advsep/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace advsep {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_logits(std::span<const double> logits, std::size_t index, const char* what) {
  if (logits.empty()) throw std::invalid_argument(std::string(what) + " requires a classifier head");
  if (index >= logits.size()) {
    throw std::out_of_range(std::string(what) + ": class index " + std::to_string(index) +
                            " out of range for " + std::to_string(logits.size()) + " logits");
  }
}

// Largest logit excluding `skip`; ties go to the lowest index.
std::size_t argmax_excluding(std::span<const double> g, std::size_t skip) {
  std::size_t best = g.size();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i == skip) continue;
    if (best == g.size() || g[i] > g[best]) best = i;
  }
  return best;
}

HeadLoss center_distance(const CenterDistanceLoss& l, std::span<const double> z) {
  if (l.center.size() != z.size()) {
    throw ShapeError("center dim " + std::to_string(l.center.size()) +
                     " does not match representation dim " + std::to_string(z.size()));
  }
  HeadLoss out;
  out.dz.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out.dz[i] = z[i] - l.center[i];
  const double d = norm_l2(out.dz);
  if (l.squared) {
    out.value = d * d;
    for (double& v : out.dz) v *= 2.0;
  } else {
    out.value = d;
    if (d == 0.0) {
      std::fill(out.dz.begin(), out.dz.end(), 0.0);
    } else {
      for (double& v : out.dz) v /= d;
    }
  }
  return out;
}

HeadLoss nearest_center(const NearestCenterLoss& l, std::span<const double> z) {
  if (l.candidates.empty()) throw std::invalid_argument("nearest-center loss needs candidates");
  if (l.centers.ndim() != 2 || l.centers.cols() != z.size()) {
    throw ShapeError("center matrix does not match representation dim");
  }
  HeadLoss best;
  bool have = false;
  for (std::size_t c : l.candidates) {
    if (c >= l.centers.rows()) throw std::out_of_range("nearest-center candidate out of range");
    auto row = l.centers.row(c);
    HeadLoss h = center_distance(CenterDistanceLoss{Array::vector({row.begin(), row.end()})}, z);
    if (!have || h.value < best.value) {
      best = std::move(h);
      have = true;
    }
  }
  return best;
}

HeadLoss cross_entropy(const CrossEntropyLoss& l, std::span<const double> z,
                       std::span<const double> g) {
  require_logits(g, l.label, "cross-entropy loss");
  HeadLoss out;
  out.dz.assign(z.size(), 0.0);
  out.value = log_sum_exp(g) - g[l.label];
  out.dg = softmax(g);
  out.dg[l.label] -= 1.0;
  return out;
}

HeadLoss cw_logit(const CwLogitLoss& l, std::span<const double> z, std::span<const double> g) {
  require_logits(g, l.label, "cw-logit loss");
  if (g.size() < 2) throw std::invalid_argument("cw-logit loss needs at least 2 classes");
  HeadLoss out;
  out.dz.assign(z.size(), 0.0);
  out.dg.assign(g.size(), 0.0);
  std::size_t plus = 0;
  std::size_t minus = 0;
  if (l.target) {
    require_logits(g, *l.target, "cw-logit loss");
    plus = argmax_excluding(g, *l.target);
    minus = *l.target;
  } else {
    plus = l.label;
    minus = argmax_excluding(g, l.label);
  }
  const double margin = g[plus] - g[minus];
  if (margin > -l.kappa) {
    out.value = margin;
    out.dg[plus] = 1.0;
    out.dg[minus] = -1.0;
  } else {
    out.value = -l.kappa;
  }
  return out;
}

HeadLoss probability(const ProbabilityLoss& l, std::span<const double> z,
                     std::span<const double> g) {
  require_logits(g, l.label, "probability loss");
  HeadLoss out;
  out.dz.assign(z.size(), 0.0);
  const std::vector<double> p = softmax(g);
  const double pc = p[l.label];
  out.value = pc;
  out.dg.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out.dg[i] = -pc * p[i];
  out.dg[l.label] += pc;
  return out;
}

HeadLoss max_probability(const MaxProbabilityLoss& l, std::span<const double> z,
                         std::span<const double> g) {
  if (l.candidates.empty()) throw std::invalid_argument("max-probability loss needs candidates");
  std::size_t best = l.candidates.front();
  for (std::size_t c : l.candidates) {
    require_logits(g, c, "max-probability loss");
    if (g[c] > g[best] || (g[c] == g[best] && c < best)) best = c;
  }
  return probability(ProbabilityLoss{best}, z, g);
}

HeadLoss composite(const CompositeLoss& l, std::span<const double> z, std::span<const double> g) {
  if (l.terms.size() != l.weights.size()) {
    throw std::invalid_argument("composite loss: terms and weights differ in length");
  }
  HeadLoss out;
  out.dz.assign(z.size(), 0.0);
  for (std::size_t t = 0; t < l.terms.size(); ++t) {
    HeadLoss part = evaluate_loss(l.terms[t], z, g);
    const double w = l.weights[t];
    if (t == 0 && w == 1.0) {
      // First unit-weight term is taken verbatim so a composite with only
      // zero-valued extras reproduces its base gradient exactly.
      out.value = part.value;
      out.dz = std::move(part.dz);
      out.dg = std::move(part.dg);
      continue;
    }
    out.value += w * part.value;
    axpy(w, part.dz, out.dz);
    if (!part.dg.empty()) {
      if (out.dg.empty()) out.dg.assign(part.dg.size(), 0.0);
      axpy(w, part.dg, out.dg);
    }
  }
  out.value += l.offset;
  return out;
}

}  // namespace

bool LossSpec::needs_logits() const {
  return std::visit(overloaded{
                        [](const CrossEntropyLoss&) { return true; },
                        [](const CwLogitLoss&) { return true; },
                        [](const ProbabilityLoss&) { return true; },
                        [](const MaxProbabilityLoss&) { return true; },
                        [](const CompositeLoss& c) {
                          return std::any_of(c.terms.begin(), c.terms.end(),
                                             [](const LossSpec& s) { return s.needs_logits(); });
                        },
                        [](const auto&) { return false; },
                    },
                    term);
}

HeadLoss evaluate_loss(const LossSpec& loss, std::span<const double> z,
                       std::span<const double> logits) {
  return std::visit(overloaded{
                        [&](const ZeroLoss&) {
                          HeadLoss h;
                          h.dz.assign(z.size(), 0.0);
                          return h;
                        },
                        [&](const CenterDistanceLoss& l) { return center_distance(l, z); },
                        [&](const NearestCenterLoss& l) { return nearest_center(l, z); },
                        [&](const CrossEntropyLoss& l) { return cross_entropy(l, z, logits); },
                        [&](const CwLogitLoss& l) { return cw_logit(l, z, logits); },
                        [&](const ProbabilityLoss& l) { return probability(l, z, logits); },
                        [&](const MaxProbabilityLoss& l) { return max_probability(l, z, logits); },
                        [&](const CompositeLoss& l) { return composite(l, z, logits); },
                    },
                    loss.term);
}

double log_sum_exp(std::span<const double> g) {
  const double m = *std::max_element(g.begin(), g.end());
  double s = 0.0;
  for (double v : g) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> g) {
  if (g.empty()) return {};
  const double m = *std::max_element(g.begin(), g.end());
  std::vector<double> p(g.size());
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    p[i] = std::exp(g[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

Array softmax(const Array& g) {
  if (g.ndim() != 1) throw ShapeError("softmax expects a 1-d array, got " + shape_string(g.shape()));
  return Array::vector(softmax(g.flat()));
}

double cw_logit_loss(std::span<const double> g, std::size_t label,
                     std::optional<std::size_t> target, double kappa) {
  if (g.size() < 2) throw std::invalid_argument("cw-logit loss needs at least 2 classes");
  return cw_logit(CwLogitLoss{label, target, kappa}, {}, g).value;
}

}  // namespace advsep
