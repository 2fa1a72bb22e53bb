#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "advsep/array.hpp"

namespace advsep {

// Losses are functions of the representation z = H(x) and, when the model has
// a classifier head, of the logits g = W z.

struct ZeroLoss {};

// ||z - center||_2, or its square when `squared` is set.
struct CenterDistanceLoss {
  Array center;
  bool squared = false;
};

// min over `candidates` of ||z - centers[c]||_2.
struct NearestCenterLoss {
  Array centers;
  std::vector<std::size_t> candidates;
};

struct CrossEntropyLoss {
  std::size_t label = 0;
};

// Carlini-Wagner logit margin. Untargeted: max(g_y - max_{i!=y} g_i, -kappa).
// Targeted: max(max_{i!=t} g_i - g_t, -kappa).
struct CwLogitLoss {
  std::size_t label = 0;
  std::optional<std::size_t> target;
  double kappa = 0.0;
};

// softmax(g)[label]
struct ProbabilityLoss {
  std::size_t label = 0;
};

// max over `candidates` of softmax(g)[c]; ties go to the lowest index.
struct MaxProbabilityLoss {
  std::vector<std::size_t> candidates;
};

struct LossSpec;

// offset + sum_i weights[i] * terms[i]
struct CompositeLoss {
  std::vector<LossSpec> terms;
  std::vector<double> weights;
  double offset = 0.0;
};

struct LossSpec {
  std::variant<ZeroLoss, CenterDistanceLoss, NearestCenterLoss, CrossEntropyLoss, CwLogitLoss,
               ProbabilityLoss, MaxProbabilityLoss, CompositeLoss>
      term;

  bool needs_logits() const;
};

struct HeadLoss {
  double value = 0.0;
  std::vector<double> dz;  // dL/dz
  std::vector<double> dg;  // dL/dg, empty when the loss ignores logits
};

// Evaluates a loss and its partials at (z, g). `logits` may be empty only for
// losses that do not read them.
HeadLoss evaluate_loss(const LossSpec& loss, std::span<const double> z,
                       std::span<const double> logits);

std::vector<double> softmax(std::span<const double> g);
Array softmax(const Array& g);
double log_sum_exp(std::span<const double> g);

// Plain value of the CW logit margin (see CwLogitLoss). Throws for < 2 classes.
double cw_logit_loss(std::span<const double> g, std::size_t label,
                     std::optional<std::size_t> target = std::nullopt, double kappa = 0.0);

}  // namespace advsep
