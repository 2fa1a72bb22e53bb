#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advsep/detector.hpp"
#include "advsep/metrics.hpp"

using namespace advsep;

namespace {

// Textbook percentile with linear interpolation between order statistics.
double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.lr = 0.02;
  cfg.momentum = 0.9;
  cfg.inner_attack.epsilon = 0.2;
  cfg.inner_attack.alpha = 0.05;
  cfg.inner_attack.iters = 5;
  cfg.squared_distance = true;
  cfg.seed = seed;
  return cfg;
}

double accuracy(const DetectorModel& det, const Dataset& ds) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) ok += classify(det, ds.example(i)) == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

struct Trained {
  Dataset train, calib;
  DetectorModel ours, vanilla;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    const Dataset all = synth_blobs(3, 160, 8, 0.08, 21);
    auto parts = stratified_split(all, {100, 60}, 3);
    r.train = parts[0];
    r.calib = parts[1];
    const CenterSet cs = make_centers(3);
    const auto cfg = quick_config(1);
    r.ours = train_separating(make_detector_network(8, {16}, 3, DetectorMode::ours, 1), cs, r.train,
                              cfg, DetectorMode::ours);
    r.vanilla = train_vanilla(make_detector_network(8, {16}, 3, DetectorMode::vanilla, 1), cs,
                              r.train, cfg);
    r.ours = calibrate_thresholds(r.ours, r.calib, 5.0);
    r.vanilla = calibrate_thresholds(r.vanilla, r.calib, 5.0);
    return r;
  }();
  return t;
}

}  // namespace

TEST(Centers, OneHotWithAdversarialRow) {
  const CenterSet cs = make_centers(4);
  EXPECT_EQ(cs.m, 5u);
  EXPECT_EQ(cs.adversarial_index(), 4u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(cs.centers.at(i, j), i == j ? 1.0 : 0.0);
  }
  EXPECT_THROW(make_centers(1), std::invalid_argument);
}

TEST(Centers, LossAndGradient) {
  const Array z = Array::vector({3.0, 4.0, 0.0});
  const Array mu = Array::vector({0.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(center_loss(z, mu), 5.0);
  EXPECT_EQ(center_loss_grad(z, mu), Array::vector({0.6, 0.8, 0.0}));
  EXPECT_EQ(center_loss_grad(mu, mu), Array::vector({0, 0, 0}));
}

TEST(Modes, ParseRoundTrip) {
  for (auto m : {DetectorMode::ours, DetectorMode::l_ben, DetectorMode::vanilla}) {
    EXPECT_EQ(parse_detector_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_detector_mode("other"), std::invalid_argument);
}

TEST(Training, ZeroAdversarialRatioEqualsBenignTraining) {
  const Dataset ds = synth_blobs(3, 30, 6, 0.1, 4);
  const CenterSet cs = make_centers(3);
  auto cfg = quick_config(5);
  cfg.epochs = 3;
  cfg.adv_ratio = 0.0;
  const MlpModel init = make_detector_network(6, {10}, 3, DetectorMode::ours, 9);
  const auto a = train_separating(init, cs, ds, cfg, DetectorMode::ours);
  const auto b = train_benign(init, cs, ds, cfg);
  EXPECT_TRUE(a.model == b.model);
}

TEST(Training, DeterministicAndLossDecreases) {
  const Dataset ds = synth_blobs(3, 40, 6, 0.1, 4);
  const CenterSet cs = make_centers(3);
  const auto cfg = quick_config(2);
  const MlpModel init = make_detector_network(6, {12}, 3, DetectorMode::ours, 3);
  TrainHistory h;
  const auto a = train_separating(init, cs, ds, cfg, DetectorMode::ours, &h);
  const auto b = train_separating(init, cs, ds, cfg, DetectorMode::ours);
  EXPECT_TRUE(a.model == b.model);
  ASSERT_EQ(h.epoch_loss.size(), cfg.epochs);
  EXPECT_LT(h.epoch_loss.back(), h.epoch_loss.front());
  EXPECT_THROW(train_separating(init, cs, ds, cfg, DetectorMode::vanilla), std::invalid_argument);
}

TEST(Training, ClassifiesBlobs) {
  const auto& t = trained();
  EXPECT_GE(accuracy(t.ours, t.calib), 0.9);
  EXPECT_GE(accuracy(t.vanilla, t.calib), 0.9);
}

TEST(Calibration, ThresholdsArePercentilesOfBenignScores) {
  const auto& t = trained();
  for (const DetectorModel* det : {&t.ours, &t.vanilla}) {
    for (double p : {1.0, 5.0, 20.0}) {
      const DetectorModel cal = calibrate_thresholds(*det, t.calib, p);
      std::vector<std::vector<double>> scores(3);
      for (std::size_t i = 0; i < t.calib.size(); ++i) {
        const Array x = t.calib.example(i);
        const std::size_t c = classify(*det, x);
        scores[c].push_back(detection_score(*det, x, c));
      }
      std::size_t flagged = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = det->mode == DetectorMode::vanilla ? p : 100.0 - p;
        EXPECT_NEAR(cal.thresholds[c], oracle_percentile(scores[c], q), 1e-12);
      }
      for (std::size_t i = 0; i < t.calib.size(); ++i) flagged += is_detected(cal, t.calib.example(i));
      // Per-class interpolation can flag at most ceil(p% of each class).
      EXPECT_LE(static_cast<double>(flagged), p / 100.0 * t.calib.size() + 3.0);
    }
  }
  EXPECT_THROW(calibrate_thresholds(t.ours, t.calib, 0.0), std::invalid_argument);
  EXPECT_THROW(calibrate_thresholds(t.ours, subset(t.calib, 10, 0), 5.0), std::invalid_argument);
}

TEST(Detection, MetricSignConventions) {
  const auto& t = trained();
  const Array x = t.calib.example(0);
  const std::size_t c = classify(t.ours, x);
  EXPECT_DOUBLE_EQ(detect_metric(t.ours, x), detection_score(t.ours, x, c) - t.ours.thresholds[c]);
  const std::size_t cv = classify(t.vanilla, x);
  EXPECT_DOUBLE_EQ(detect_metric(t.vanilla, x), t.vanilla.thresholds[cv] - detection_score(t.vanilla, x, cv));
  // The differentiable q agrees with the metric for the predicted class.
  EXPECT_NEAR(loss_value(t.ours.model, x, detector_q_loss(t.ours, c)), detect_metric(t.ours, x), 1e-12);
  EXPECT_NEAR(loss_value(t.vanilla.model, x, detector_q_loss(t.vanilla, cv)), detect_metric(t.vanilla, x),
              1e-12);
}

TEST(Detection, ClassProbabilitiesSumToOne) {
  const auto& t = trained();
  for (const DetectorModel* det : {&t.ours, &t.vanilla}) {
    const Array p = class_probabilities(*det, t.calib.example(5));
    ASSERT_EQ(p.size(), 3u);
    double s = 0.0;
    for (double v : p.storage()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < 3; ++c) if (p[c] > p[arg]) arg = c;
    EXPECT_EQ(arg, classify(*det, t.calib.example(5)));
  }
}

TEST(Attack, MultiTargetOutcomeIsConsistent) {
  const auto& t = trained();
  AttackConfig cfg;
  cfg.epsilon = 0.5;
  cfg.alpha = 0.02;
  cfg.iters = 60;
  std::size_t fooled = 0;
  for (std::size_t i = 0; i < 30; i += 3) {
    const Array x = t.calib.example(i);
    const std::size_t y = t.calib.labels[i];
    for (const DetectorModel* det : {&t.ours, &t.vanilla}) {
      const auto r = multi_target_attack(*det, x, y, cfg);
      EXPECT_TRUE(within_budget(r.x_adv, x, Norm::linf, 0.5));
      ASSERT_TRUE(r.target.has_value());
      EXPECT_NE(*r.target, y);
      EXPECT_EQ(r.fooled, classify(*det, r.x_adv) != y);
      EXPECT_EQ(r.evaded, !is_detected(*det, r.x_adv));
      fooled += r.fooled;
    }
  }
  EXPECT_GT(fooled, 10u);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto& t = trained();
  for (const DetectorModel* det : {&t.ours, &t.vanilla}) {
    std::stringstream ss;
    save_detector(ss, *det);
    const DetectorModel back = load_detector(ss);
    EXPECT_TRUE(back.model == det->model);
    EXPECT_EQ(back.thresholds, det->thresholds);
    EXPECT_EQ(back.centers.centers, det->centers.centers);
    EXPECT_EQ(back.mode, det->mode);
  }
  std::stringstream ss;
  save_detector(ss, t.ours);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_ANY_THROW(load_detector(truncated));
  bytes[0] ^= 0x5a;
  std::stringstream bad(bytes);
  EXPECT_ANY_THROW(load_detector(bad));
}

TEST(Representations, CsvShape) {
  const auto& t = trained();
  std::ostringstream os;
  const Dataset few = subset(t.calib, 2, 0);
  write_representations(os, t.ours, few, {few.example(0)}, {few.labels[0]});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "label,is_adv,z0,z1,z2,z3");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    const Array x = rows < few.size() ? few.example(rows) : few.example(0);
    const Array z = forward(t.ours.model, x);
    std::istringstream fields(line);
    std::string cell;
    std::getline(fields, cell, ',');
    std::getline(fields, cell, ',');
    EXPECT_EQ(cell, rows < few.size() ? "0" : "1");
    for (std::size_t j = 0; j < z.size(); ++j) {
      ASSERT_TRUE(std::getline(fields, cell, ','));
      EXPECT_EQ(std::stod(cell), z[j]);
    }
    ++rows;
  }
  EXPECT_EQ(rows, few.size() + 1);
}
