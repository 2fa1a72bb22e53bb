#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "advsep/array.hpp"
#include "advsep/loss.hpp"

namespace advsep {

// Other activations would slot in here together with their derivative in
// backward(); only the two used by the detector are implemented.
enum class Activation : std::uint32_t { relu = 0, linear = 1 };

struct DenseLayer {
  Array weight;  // out x in
  Array bias;    // out
  Activation activation = Activation::relu;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// H(x) = h_L(...h_1(x)), optionally followed by a linear classifier head
// g(x) = W H(x) with W of shape k x m.
struct MlpModel {
  std::vector<DenseLayer> layers;
  std::optional<Array> head;

  // Throws ShapeError when layer dims do not chain or the head does not fit.
  void validate() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;  // representation dim m
  std::size_t num_classes() const;  // head rows, 0 when headless
  std::size_t parameter_count() const;

  // Uniform init in [-s, s], s = sqrt(6 / (fan_in + fan_out)), zero biases.
  // `widths` = {input, hidden..., m}; hidden layers use `hidden`, the last uses `last`.
  static MlpModel random(const std::vector<std::size_t>& widths, std::uint64_t seed,
                         std::optional<std::size_t> head_classes = std::nullopt,
                         Activation hidden = Activation::relu, Activation last = Activation::linear);

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct LayerGrad {
  Array weight;
  Array bias;
};

struct GradPair {
  std::vector<LayerGrad> param_grads;
  std::optional<Array> head_grad;
  Array input_grad;

  // Zero gradients shaped like `model` with an input gradient of `input_dim`.
  static GradPair zeros_like(const MlpModel& model);
  void scale(double s);
};

Array forward(const MlpModel& model, const Array& x);
Array logits(const MlpModel& model, const Array& x);

struct LossAndGrad {
  double loss = 0.0;
  GradPair grads;
};

// Exact reverse-mode gradients of `loss` at x w.r.t. all parameters and x.
LossAndGrad grad(const MlpModel& model, const Array& x, const LossSpec& loss);

struct LossAndInputGrad {
  double loss = 0.0;
  Array input_grad;
};

// Same as grad() but skips parameter gradients; used by attacks.
LossAndInputGrad input_grad(const MlpModel& model, const Array& x, const LossSpec& loss);

// acc += scale * dL/dtheta (input gradient not accumulated). Returns L.
double accumulate_grad(const MlpModel& model, const Array& x, const LossSpec& loss, double scale,
                       GradPair& acc);

double loss_value(const MlpModel& model, const Array& x, const LossSpec& loss);

// theta <- theta - lr * grads
MlpModel sgd_step(const MlpModel& model, const GradPair& grads, double lr);

// SGD with optional heavy-ball momentum: v <- momentum * v + g; theta <- theta - lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum = 0.0);
  void step(MlpModel& model, const GradPair& grads);
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::optional<GradPair> velocity_;
};

// Max relative error between analytic gradients and central differences over
// every parameter and input coordinate. Relative error is
// |a - n| / max(|a|, |n|, kFiniteDiffFloor).
inline constexpr double kFiniteDiffFloor = 1e-4;
double finite_diff_check(const MlpModel& model, const Array& x, const LossSpec& loss, double h);

// Versioned binary checkpoint; doubles stored as raw IEEE-754 little-endian.
void save_model(std::ostream& os, const MlpModel& model);
MlpModel load_model(std::istream& is);
void save_model(const std::string& path, const MlpModel& model);
MlpModel load_model(const std::string& path);

}  // namespace advsep
