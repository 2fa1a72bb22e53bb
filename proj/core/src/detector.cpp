#include "advsep/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "advsep/metrics.hpp"
#include "binary_io.hpp"

namespace advsep {

namespace {

constexpr char kDetectorMagic[] = "ADVSEPD1";
constexpr std::uint32_t kDetectorVersion = 1;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined key
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E5D5ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<double> distances_to_benign(const DetectorModel& det, const Array& z) {
  std::vector<double> d(det.centers.k);
  for (std::size_t c = 0; c < det.centers.k; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double diff = z[i] - det.centers.centers.at(c, i);
      s += diff * diff;
    }
    d[c] = std::sqrt(s);
  }
  return d;
}

LossSpec center_term(const CenterSet& centers, std::size_t c, bool squared) {
  return LossSpec{CenterDistanceLoss{centers.center(c), squared}};
}

enum class BatchLoss { centers, cross_entropy };

DetectorModel run_training(MlpModel model, const CenterSet& centers, const Dataset& data,
                           const TrainConfig& cfg, DetectorMode mode, BatchLoss kind,
                           TrainHistory* history) {
  cfg.validate();
  data.validate();
  model.validate();
  if (model.output_dim() != centers.m) {
    throw ShapeError("model representation dim " + std::to_string(model.output_dim()) +
                     " does not match center dim " + std::to_string(centers.m));
  }
  if (data.num_classes > centers.k) throw std::invalid_argument("data labels exceed center count");
  if (kind == BatchLoss::cross_entropy && model.num_classes() != centers.k) {
    throw ShapeError("vanilla training needs a classifier head with k rows");
  }
  const bool with_adv = kind == BatchLoss::centers && cfg.adv_ratio > 0.0;
  if (with_adv) cfg.inner_attack.validate();

  std::mt19937_64 order_rng(cfg.seed);
  SgdOptimizer opt(cfg.lr, cfg.momentum);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  struct Cached {
    Array x_adv;
    std::size_t made_at = 0;
  };
  std::unordered_map<std::size_t, Cached> cache;
  std::size_t global_batch = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    std::mt19937_64 target_rng(mix(cfg.seed, epoch));
    const bool adv_epoch = with_adv && epoch >= cfg.warmup_epochs;
    double epoch_loss = 0.0;
    std::size_t epoch_terms = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++global_batch) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
      const std::size_t na =
          adv_epoch ? static_cast<std::size_t>(std::llround(cfg.adv_ratio * static_cast<double>(nb)))
                    : 0;
      const double scale = 1.0 / static_cast<double>(nb + na);
      GradPair acc = GradPair::zeros_like(model);

      for (std::size_t j = 0; j < nb; ++j) {
        const std::size_t idx = order[start + j];
        const std::size_t y = data.labels[idx];
        const LossSpec loss = kind == BatchLoss::cross_entropy
                                  ? LossSpec{CrossEntropyLoss{y}}
                                  : center_term(centers, y, cfg.squared_distance);
        epoch_loss += accumulate_grad(model, data.example(idx), loss, scale, acc);
      }
      for (std::size_t j = 0; j < na; ++j) {
        const std::size_t idx = order[start + (j % nb)];
        const std::size_t y = data.labels[idx];
        const bool regen = global_batch % cfg.regen_every == 0;
        auto it = cache.find(idx);
        if (regen || it == cache.end() || j >= nb) {
          // Targeted attack toward a uniformly random wrong benign center.
          std::uniform_int_distribution<std::size_t> pick(0, centers.k - 2);
          std::size_t t = pick(target_rng);
          if (t >= y) ++t;
          AttackConfig ac = cfg.inner_attack;
          ac.target = t;
          ac.seed = mix(cfg.inner_attack.seed, global_batch * 65536 + j);
          const AttackObjective obj = center_objective(centers.centers, y, t);
          Array adv = pgd(model, obj, data.example(idx), ac).x_adv;
          it = cache.insert_or_assign(idx, Cached{std::move(adv), global_batch}).first;
        }
        const std::size_t dest = mode == DetectorMode::l_ben ? y : centers.adversarial_index();
        epoch_loss += accumulate_grad(model, it->second.x_adv,
                                      center_term(centers, dest, cfg.squared_distance), scale, acc);
      }
      epoch_terms += nb + na;
      opt.step(model, acc);
    }
    if (history) history->epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_terms));
  }

  DetectorModel det;
  det.model = std::move(model);
  det.centers = centers;
  det.thresholds = Array({centers.k});
  det.mode = mode;
  for (const auto& l : det.model.layers) {
    l.weight.require_finite("trained weights");
    l.bias.require_finite("trained biases");
  }
  return det;
}

}  // namespace

std::string to_string(DetectorMode mode) {
  switch (mode) {
    case DetectorMode::ours: return "ours";
    case DetectorMode::l_ben: return "l_ben";
    case DetectorMode::vanilla: return "vanilla";
  }
  return "?";
}

DetectorMode parse_detector_mode(const std::string& s) {
  if (s == "ours") return DetectorMode::ours;
  if (s == "l_ben" || s == "l-ben" || s == "lben") return DetectorMode::l_ben;
  if (s == "vanilla") return DetectorMode::vanilla;
  throw std::invalid_argument("unknown detector mode '" + s + "' (expected ours, l_ben, vanilla)");
}

Array CenterSet::center(std::size_t c) const {
  auto r = centers.row(c);
  return Array::vector({r.begin(), r.end()});
}

CenterSet make_centers(std::size_t k) {
  if (k < 2) throw std::invalid_argument("need at least 2 classes for a center set");
  CenterSet cs;
  cs.k = k;
  cs.m = k + 1;
  cs.centers = Array({k + 1, k + 1});
  for (std::size_t i = 0; i <= k; ++i) cs.centers.at(i, i) = 1.0;
  return cs;
}

double center_loss(const Array& z, const Array& mu) {
  return evaluate_loss(LossSpec{CenterDistanceLoss{mu}}, z.flat(), {}).value;
}

Array center_loss_grad(const Array& z, const Array& mu) {
  return Array::vector(evaluate_loss(LossSpec{CenterDistanceLoss{mu}}, z.flat(), {}).dz);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adv_ratio >= 0.0)) throw std::invalid_argument("adv_ratio must be >= 0");
  if (regen_every == 0) throw std::invalid_argument("regen_every must be >= 1");
}

void DetectorModel::validate() const {
  model.validate();
  if (model.output_dim() != centers.m) {
    throw ShapeError("detector representation dim does not match center dim");
  }
  if (thresholds.size() != centers.k) throw ShapeError("need one threshold per benign class");
  for (double t : thresholds.storage()) {
    if (!(t >= 0.0)) throw std::invalid_argument("thresholds must be non-negative");
  }
  if (mode == DetectorMode::vanilla && model.num_classes() != centers.k) {
    throw ShapeError("vanilla detector needs a k-row classifier head");
  }
}

MlpModel make_detector_network(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                               std::size_t k, DetectorMode mode, std::uint64_t seed) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(k + 1);
  std::optional<std::size_t> head;
  if (mode == DetectorMode::vanilla) head = k;
  return MlpModel::random(widths, seed, head);
}

DetectorModel train_benign(MlpModel model, const CenterSet& centers, const Dataset& data,
                           const TrainConfig& cfg, TrainHistory* history) {
  TrainConfig c = cfg;
  c.adv_ratio = 0.0;
  return run_training(std::move(model), centers, data, c, DetectorMode::ours, BatchLoss::centers,
                      history);
}

DetectorModel train_separating(MlpModel model, const CenterSet& centers, const Dataset& data,
                               const TrainConfig& cfg, DetectorMode mode, TrainHistory* history) {
  if (mode == DetectorMode::vanilla) {
    throw std::invalid_argument("train_separating expects mode ours or l_ben");
  }
  return run_training(std::move(model), centers, data, cfg, mode, BatchLoss::centers, history);
}

DetectorModel train_vanilla(MlpModel model, const CenterSet& centers, const Dataset& data,
                            const TrainConfig& cfg, TrainHistory* history) {
  return run_training(std::move(model), centers, data, cfg, DetectorMode::vanilla,
                      BatchLoss::cross_entropy, history);
}

std::size_t classify(const DetectorModel& det, const Array& x) {
  if (det.mode == DetectorMode::vanilla) {
    const Array g = logits(det.model, x);
    return static_cast<std::size_t>(std::max_element(g.flat().begin(), g.flat().end()) -
                                    g.flat().begin());
  }
  const std::vector<double> d = distances_to_benign(det, forward(det.model, x));
  return static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
}

double detection_score(const DetectorModel& det, const Array& x, std::size_t cls) {
  if (det.mode == DetectorMode::vanilla) {
    return softmax(logits(det.model, x)).flat()[cls];
  }
  return distances_to_benign(det, forward(det.model, x)).at(cls);
}

double detect_metric(const DetectorModel& det, const Array& x) {
  const std::size_t c = classify(det, x);
  const double s = detection_score(det, x, c);
  const double tau = det.thresholds[c];
  return det.mode == DetectorMode::vanilla ? tau - s : s - tau;
}

bool is_detected(const DetectorModel& det, const Array& x) { return detect_metric(det, x) > 0.0; }

LossSpec detector_q_loss(const DetectorModel& det, std::size_t cls) {
  const double tau = det.thresholds[cls];
  if (det.mode == DetectorMode::vanilla) {
    return LossSpec{CompositeLoss{{LossSpec{ProbabilityLoss{cls}}}, {-1.0}, tau}};
  }
  return LossSpec{CompositeLoss{{center_term(det.centers, cls, false)}, {1.0}, -tau}};
}

Array class_probabilities(const DetectorModel& det, const Array& x) {
  if (det.mode == DetectorMode::vanilla) return softmax(logits(det.model, x));
  std::vector<double> d = distances_to_benign(det, forward(det.model, x));
  for (double& v : d) v = -v * v;
  return Array::vector(softmax(d));
}

DetectorModel calibrate_thresholds(DetectorModel det, const Dataset& benign, double fpr_percent) {
  if (!(fpr_percent > 0.0 && fpr_percent < 100.0)) {
    throw std::invalid_argument("false-positive percent must be in (0, 100)");
  }
  const auto counts = benign.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 20) {
      throw std::invalid_argument("calibration needs >= 20 benign examples per class, class " +
                                  std::to_string(c) + " has " + std::to_string(counts[c]));
    }
  }
  std::vector<std::vector<double>> scores(det.centers.k);
  for (std::size_t i = 0; i < benign.size(); ++i) {
    const Array x = benign.example(i);
    const std::size_t c = classify(det, x);
    scores[c].push_back(detection_score(det, x, c));
  }
  det.thresholds = Array({det.centers.k});
  for (std::size_t c = 0; c < det.centers.k; ++c) {
    if (scores[c].empty()) continue;
    det.thresholds[c] = det.mode == DetectorMode::vanilla
                            ? percentile(scores[c], fpr_percent)
                            : percentile(scores[c], 100.0 - fpr_percent);
  }
  return det;
}

AttackObjective adaptive_objective(const DetectorModel& det, std::size_t label,
                                   std::optional<std::size_t> target, double kappa) {
  AttackObjective base = base_objective(det, label, target, kappa);
  if (target) return adapt(std::move(base), detector_q_loss(det, *target), 1.0);
  // Untargeted: ascend the base loss while descending the detector metric of
  // the class the input is pushed into.
  std::vector<std::size_t> wrong;
  for (std::size_t c = 0; c < det.centers.k; ++c) {
    if (c != label) wrong.push_back(c);
  }
  if (det.mode == DetectorMode::vanilla) {
    // q falls as the most confident wrong class gains probability.
    LossSpec q{CompositeLoss{{LossSpec{MaxProbabilityLoss{wrong}}}, {-1.0}, 0.0}};
    return adapt(std::move(base), std::move(q), -1.0);
  }
  return adapt(std::move(base), LossSpec{NearestCenterLoss{det.centers.centers, wrong}}, -1.0);
}

DetectorAttack multi_target_attack(const DetectorModel& det, const Array& x, std::size_t label,
                                   const AttackConfig& cfg, bool adaptive) {
  const std::size_t k = det.centers.k;
  if (label >= k) throw std::invalid_argument("label out of range");
  // Lower key = closer to being predicted.
  std::vector<double> key(k);
  if (det.mode == DetectorMode::vanilla) {
    const Array g = logits(det.model, x);
    for (std::size_t c = 0; c < k; ++c) key[c] = -g[c];
  } else {
    key = distances_to_benign(det, forward(det.model, x));
  }
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < k; ++c) {
    if (c != label) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });

  std::optional<DetectorAttack> first;
  std::optional<DetectorAttack> best_fooled;
  double best_q = INFINITY;
  for (std::size_t t : order) {
    AttackConfig c = cfg;
    c.target = t;
    c.seed = cfg.seed + t;
    const AttackObjective obj =
        adaptive ? adaptive_objective(det, label, t) : base_objective(det, label, t);
    DetectorAttack r{pgd(det.model, obj, x, c).x_adv, t, false, false};
    r.fooled = classify(det, r.x_adv) != label;
    const double q = detect_metric(det, r.x_adv);
    r.evaded = q <= 0.0;
    if (r.fooled && r.evaded) return r;
    if (r.fooled && q < best_q) {
      best_q = q;
      best_fooled = r;
    }
    if (!first) first = std::move(r);
  }
  return best_fooled ? *best_fooled : *first;
}

AttackObjective base_objective(const DetectorModel& det, std::size_t label,
                               std::optional<std::size_t> target, double kappa) {
  if (det.mode == DetectorMode::vanilla) return cw_objective(label, target, kappa);
  return center_objective(det.centers.centers, label, target);
}

void save_detector(std::ostream& os, const DetectorModel& det) {
  det.validate();
  os.write(kDetectorMagic, 8);
  detail::write_pod<std::uint32_t>(os, kDetectorVersion);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(det.mode));
  detail::write_pod<std::uint64_t>(os, det.centers.k);
  detail::write_array(os, det.centers.centers);
  detail::write_array(os, det.thresholds);
  save_model(os, det.model);
  if (!os) throw std::runtime_error("failed writing detector checkpoint");
}

DetectorModel load_detector(std::istream& is) {
  detail::expect_magic(is, std::string(kDetectorMagic, 8));
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kDetectorVersion) {
    throw detail::FormatError("unsupported detector checkpoint version " + std::to_string(version));
  }
  const auto mode = detail::read_pod<std::uint32_t>(is);
  if (mode > 2) throw detail::FormatError("unknown detector mode tag");
  DetectorModel det;
  det.mode = static_cast<DetectorMode>(mode);
  det.centers.k = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
  det.centers.centers = detail::read_array(is);
  det.centers.m = det.centers.centers.ndim() == 2 ? det.centers.centers.cols() : 0;
  det.thresholds = detail::read_array(is);
  det.model = load_model(is);
  det.validate();
  return det;
}

void save_detector(const std::string& path, const DetectorModel& det) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_detector(os, det);
}

DetectorModel load_detector(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return load_detector(is);
}

void write_representations(std::ostream& os, const DetectorModel& det, const Dataset& benign,
                           const std::vector<Array>& adversarial,
                           const std::vector<std::size_t>& adversarial_labels) {
  if (adversarial.size() != adversarial_labels.size()) {
    throw std::invalid_argument("adversarial inputs and labels differ in length");
  }
  os << "label,is_adv";
  for (std::size_t j = 0; j < det.centers.m; ++j) os << ",z" << j;
  os << '\n';
  char buf[32];
  auto row = [&](std::size_t label, int is_adv, const Array& x) {
    os << label << ',' << is_adv;
    const Array z = forward(det.model, x);
    for (double v : z.storage()) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  };
  for (std::size_t i = 0; i < benign.size(); ++i) row(benign.labels[i], 0, benign.example(i));
  for (std::size_t i = 0; i < adversarial.size(); ++i) row(adversarial_labels[i], 1, adversarial[i]);
}

}  // namespace advsep
