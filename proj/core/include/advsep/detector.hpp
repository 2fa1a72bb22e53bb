#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "advsep/array.hpp"
#include "advsep/attack.hpp"
#include "advsep/dataset.hpp"
#include "advsep/loss.hpp"
#include "advsep/mlp.hpp"

namespace advsep {

// Detector flavours:
//   ours    - benign class c clusters at mu_c, adversarial inputs at mu_k
//   l_ben   - adversarial inputs are pulled back to their original class center
//   vanilla - softmax classifier trained with cross-entropy; detects by low confidence
enum class DetectorMode { ours, l_ben, vanilla };

std::string to_string(DetectorMode mode);
DetectorMode parse_detector_mode(const std::string& s);

// k + 1 one-hot centers in R^{k+1}; row k is the adversarial center.
struct CenterSet {
  Array centers;
  std::size_t k = 0;
  std::size_t m = 0;

  Array center(std::size_t c) const;
  std::size_t adversarial_index() const { return k; }
};

CenterSet make_centers(std::size_t k);

// Unsquared Euclidean distance ||z - mu||_2.
double center_loss(const Array& z, const Array& mu);
// (z - mu) / ||z - mu||, zero when z == mu.
Array center_loss_grad(const Array& z, const Array& mu);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  AttackConfig inner_attack;
  double adv_ratio = 1.0;       // adversarial examples per benign example in a batch
  std::size_t regen_every = 1;  // batches between adversarial regeneration
  std::size_t warmup_epochs = 0;  // leading epochs trained on benign terms only
  bool squared_distance = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean per-example loss over each epoch
};

struct DetectorModel {
  MlpModel model;
  CenterSet centers;
  Array thresholds;  // tau_c per benign class
  DetectorMode mode = DetectorMode::ours;

  std::size_t num_classes() const { return centers.k; }
  void validate() const;
};

// Architecture helper: widths {d, hidden..., k+1}; vanilla models also get a
// k x (k+1) classifier head.
MlpModel make_detector_network(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                               std::size_t k, DetectorMode mode, std::uint64_t seed);

DetectorModel train_benign(MlpModel model, const CenterSet& centers, const Dataset& data,
                           const TrainConfig& cfg, TrainHistory* history = nullptr);

// Mixes benign center terms with terms on adversarial examples produced by a
// targeted PGD toward a random wrong center. mode=ours sends them to mu_k,
// mode=l_ben back to mu_y.
DetectorModel train_separating(MlpModel model, const CenterSet& centers, const Dataset& data,
                               const TrainConfig& cfg, DetectorMode mode,
                               TrainHistory* history = nullptr);

// Cross-entropy training of the classifier head (Vanilla baseline).
DetectorModel train_vanilla(MlpModel model, const CenterSet& centers, const Dataset& data,
                            const TrainConfig& cfg, TrainHistory* history = nullptr);

// Nearest benign center (lowest index on ties); vanilla uses argmax logits.
std::size_t classify(const DetectorModel& det, const Array& x);

// Raw score compared against tau for class `cls`: distance to mu_cls, or the
// softmax probability of `cls` for vanilla.
double detection_score(const DetectorModel& det, const Array& x, std::size_t cls);

// q(x) for the predicted class; q > 0 flags x as adversarial.
double detect_metric(const DetectorModel& det, const Array& x);
bool is_detected(const DetectorModel& det, const Array& x);

// q restricted to class `cls` as a differentiable loss.
LossSpec detector_q_loss(const DetectorModel& det, std::size_t cls);

// Class probabilities exposed to query-based attackers. Distance detectors
// answer softmax(-||z - mu_c||^2) over benign centers.
Array class_probabilities(const DetectorModel& det, const Array& x);

// Per class c, tau_c is the (100 - p)th percentile (linear interpolation) of
// benign distances among examples classified as c (the pth percentile of
// confidences for vanilla). Classes with no such example get tau_c = 0.
DetectorModel calibrate_thresholds(DetectorModel det, const Dataset& benign, double fpr_percent);

// Adaptive whitebox objective against `det`: the base attack loss plus the
// detector metric for the class the attacker is steering into.
AttackObjective adaptive_objective(const DetectorModel& det, std::size_t label,
                                   std::optional<std::size_t> target, double kappa = 0.0);

struct DetectorAttack {
  Array x_adv;
  std::optional<std::size_t> target;  // wrong class the kept run was steered to
  bool fooled = false;                // predicted label != y
  bool evaded = false;                // not flagged by the detector
};

// Untargeted attack carried out as targeted PGD toward each wrong class, the
// closest ones first, stopping at the first undetected misclassification. If
// none succeeds the misclassified result with the lowest q is kept, falling
// back to the run toward the closest class.
DetectorAttack multi_target_attack(const DetectorModel& det, const Array& x, std::size_t label,
                                   const AttackConfig& cfg, bool adaptive = true);

// Non-adaptive objective appropriate for the detector's own classifier.
AttackObjective base_objective(const DetectorModel& det, std::size_t label,
                               std::optional<std::size_t> target, double kappa = 0.0);

void save_detector(std::ostream& os, const DetectorModel& det);
DetectorModel load_detector(std::istream& is);
void save_detector(const std::string& path, const DetectorModel& det);
DetectorModel load_detector(const std::string& path);

// CSV `label,is_adv,z0..z{m-1}` rows for external plotting.
void write_representations(std::ostream& os, const DetectorModel& det, const Dataset& benign,
                           const std::vector<Array>& adversarial,
                           const std::vector<std::size_t>& adversarial_labels);

}  // namespace advsep
