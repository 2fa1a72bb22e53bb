#include "advsep/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "advsep/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace advsep {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- config parsing helpers ----

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_req(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing required key " + where + "." + key);
  return get_or<T>(j, key, T{}, where);
}

AttackConfig parse_attack_config(const json& j, const std::string& where, AttackConfig c) {
  try {
    if (j.contains("norm")) c.norm = parse_norm(get_req<std::string>(j, "norm", where));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ".norm: " + e.what());
  }
  c.epsilon = get_or(j, "epsilon", c.epsilon, where);
  c.alpha = get_or(j, "alpha", c.alpha, where);
  c.iters = get_or(j, "iters", c.iters, where);
  c.restarts = get_or(j, "restarts", c.restarts, where);
  c.momentum_decay = get_or(j, "momentum_decay", c.momentum_decay, where);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

json attack_config_json(const AttackConfig& c) {
  return {{"norm", to_string(c.norm)}, {"epsilon", c.epsilon},   {"alpha", c.alpha},
          {"iters", c.iters},          {"restarts", c.restarts}, {"momentum_decay", c.momentum_decay}};
}

// ---- file helpers ----

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorCode::missing_file, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << content;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path.string()));
  } catch (const json::parse_error& e) {
    throw DataError(DataErrorCode::bad_csv, path.string() + ": " + e.what());
  }
}

struct Splits {
  Dataset train, calib, test;
};

fs::path out_dir(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir); }

std::size_t manifest_classes(const ExperimentConfig& cfg) {
  const json m = read_json(out_dir(cfg) / "data" / "manifest.json");
  return m.at("num_classes").get<std::size_t>();
}

Splits load_splits(const ExperimentConfig& cfg) {
  const fs::path d = out_dir(cfg) / "data";
  if (!fs::exists(d / "manifest.json")) {
    throw DataError(DataErrorCode::missing_file, "no prepared data in " + d.string() + " (run prepare)");
  }
  const std::size_t k = manifest_classes(cfg);
  return {read_csv((d / "train.csv").string(), k), read_csv((d / "calib.csv").string(), k),
          read_csv((d / "test.csv").string(), k)};
}

DetectorModel load_trained(const ExperimentConfig& cfg) {
  const fs::path p = out_dir(cfg) / "model" / "detector.bin";
  if (!fs::exists(p)) throw DataError(DataErrorCode::missing_file, "no checkpoint " + p.string() + " (run train)");
  return load_detector(p.string());
}

double min_p(const ExperimentConfig& cfg) { return *std::min_element(cfg.p_list.begin(), cfg.p_list.end()); }

fs::path cell_dir(const ExperimentConfig& cfg, const AttackSpec& spec, std::size_t alpha_index) {
  return out_dir(cfg) / "attacks" / spec.name / ("a" + std::to_string(alpha_index));
}

std::uint64_t cell_seed(std::uint64_t seed, const AttackSpec& spec, std::size_t alpha_index) {
  return splitmix64(seed ^ fnv1a(spec.name) ^ splitmix64(alpha_index + 1));
}

json record_json(const ExampleRecord& r) {
  return {{"index", r.index},
          {"label", r.label},
          {"target", r.target ? json(*r.target) : json()},
          {"success", r.success},
          {"norm_used", r.norm_used},
          {"final_objective", r.final_objective},
          {"queries", r.queries}};
}

ExampleRecord record_from_json(const json& j) {
  ExampleRecord r;
  r.index = j.at("index").get<std::size_t>();
  r.label = j.at("label").get<std::size_t>();
  if (!j.at("target").is_null()) r.target = j.at("target").get<std::size_t>();
  r.success = j.at("success").get<bool>();
  r.norm_used = j.at("norm_used").get<double>();
  r.final_objective = j.at("final_objective").get<double>();
  r.queries = j.at("queries").get<std::size_t>();
  return r;
}

CellResult load_cell(const fs::path& dir, std::size_t num_classes) {
  const json j = read_json(dir / "records.json");
  CellResult cell;
  for (const auto& r : j.at("records")) cell.records.push_back(record_from_json(r));
  const Dataset adv = read_csv((dir / "adversarial.csv").string(), num_classes);
  if (adv.size() != cell.records.size()) {
    throw DataError(DataErrorCode::count_mismatch, "adversarial set and records differ in " + dir.string());
  }
  for (std::size_t i = 0; i < adv.size(); ++i) cell.adversarial.push_back(adv.example(i));
  return cell;
}

// Higher = more adversarial-looking, for AUC.
double auc_score(const DetectorModel& det, const Array& x, std::size_t cls) {
  const double s = detection_score(det, x, cls);
  return det.mode == DetectorMode::vanilla ? -s : s;
}

MlpModel train_surrogate(const Dataset& train, const AttackSpec& spec, const TrainConfig& base,
                         std::uint64_t seed) {
  const std::size_t k = train.num_classes;
  TrainConfig tc = base;
  tc.seed = seed;
  const std::vector<std::size_t> hidden =
      spec.surrogate_hidden.empty() ? std::vector<std::size_t>{128, 64} : spec.surrogate_hidden;
  const CenterSet centers = make_centers(k);
  return train_vanilla(make_detector_network(train.input_dim(), hidden, k, DetectorMode::vanilla, seed),
                       centers, train, tc)
      .model;
}

}  // namespace

// ---- AttackMethod ----

std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::mim: return "mim";
    case AttackMethod::cw: return "cw";
    case AttackMethod::multi_target: return "multi_target";
    case AttackMethod::nes: return "nes";
    case AttackMethod::boundary: return "boundary";
    case AttackMethod::transfer: return "transfer";
  }
  return "?";
}

AttackMethod parse_attack_method(const std::string& s) {
  for (AttackMethod m : {AttackMethod::fgsm, AttackMethod::pgd, AttackMethod::mim, AttackMethod::cw,
                         AttackMethod::multi_target, AttackMethod::nes, AttackMethod::boundary,
                         AttackMethod::transfer}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown attack method '" + s + "'");
}

std::vector<double> AttackSpec::alphas() const {
  return alpha_grid.empty() ? std::vector<double>{cfg.alpha} : alpha_grid;
}

// ---- config ----

ExperimentConfig parse_config(const json& j, const std::string& base_dir) {
  check_keys(j, "config",
             {"seed", "output_dir", "dataset", "model", "detector", "train", "attacks", "metrics", "threads"});
  ExperimentConfig cfg;
  cfg.seed = get_req<std::uint64_t>(j, "seed", "config");
  cfg.output_dir = get_or<std::string>(j, "output_dir", "run", "config");
  cfg.threads = get_or<std::size_t>(j, "threads", 1, "config");
  if (cfg.threads == 0) throw ConfigError("threads must be >= 1");

  const json& d = j.contains("dataset") ? j.at("dataset") : throw ConfigError("missing dataset section");
  check_keys(d, "dataset",
             {"kind", "images", "labels", "classes", "dim", "spread", "train_per_class",
              "calib_per_class", "test_per_class"});
  DatasetSpec& ds = cfg.data;
  ds.kind = get_req<std::string>(d, "kind", "dataset");
  if (ds.kind == "mnist") {
    auto resolve = [&](const std::string& p) {
      fs::path path(p);
      if (path.is_relative()) path = fs::path(base_dir) / path;
      if (!fs::exists(path)) throw ConfigError("dataset file not found: " + path.string());
      return path.lexically_normal().string();
    };
    ds.images = resolve(get_req<std::string>(d, "images", "dataset"));
    ds.labels = resolve(get_req<std::string>(d, "labels", "dataset"));
    ds.classes = 10;
    ds.dim = 784;
  } else if (ds.kind == "blobs") {
    ds.classes = get_or(d, "classes", ds.classes, "dataset");
    ds.dim = get_or(d, "dim", ds.dim, "dataset");
    ds.spread = get_or(d, "spread", ds.spread, "dataset");
    if (ds.classes < 2 || ds.dim < 2 || !(ds.spread > 0.0)) throw ConfigError("invalid blobs parameters");
  } else {
    throw ConfigError("dataset.kind must be 'mnist' or 'blobs'");
  }
  ds.train_per_class = get_or(d, "train_per_class", ds.train_per_class, "dataset");
  ds.calib_per_class = get_or(d, "calib_per_class", ds.calib_per_class, "dataset");
  ds.test_per_class = get_or(d, "test_per_class", ds.test_per_class, "dataset");
  if (ds.train_per_class == 0 || ds.calib_per_class == 0 || ds.test_per_class == 0) {
    throw ConfigError("every split needs at least one example per class");
  }

  if (j.contains("model")) {
    check_keys(j.at("model"), "model", {"hidden"});
    cfg.hidden = get_or(j.at("model"), "hidden", cfg.hidden, "model");
  }
  for (std::size_t w : cfg.hidden) {
    if (w == 0) throw ConfigError("hidden widths must be positive");
  }
  if (j.contains("detector")) {
    check_keys(j.at("detector"), "detector", {"mode"});
    try {
      cfg.mode = parse_detector_mode(get_or<std::string>(j.at("detector"), "mode", "ours", "detector"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  TrainConfig& tc = cfg.train;
  tc.inner_attack = AttackConfig{};
  tc.inner_attack.iters = 10;
  tc.inner_attack.alpha = 0.075;
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"epochs", "batch_size", "lr", "momentum", "adv_ratio", "regen_every", "warmup_epochs",
                "squared_distance", "inner_attack"});
    tc.epochs = get_or(t, "epochs", tc.epochs, "train");
    tc.batch_size = get_or(t, "batch_size", tc.batch_size, "train");
    tc.lr = get_or(t, "lr", tc.lr, "train");
    tc.momentum = get_or(t, "momentum", tc.momentum, "train");
    tc.adv_ratio = get_or(t, "adv_ratio", tc.adv_ratio, "train");
    tc.regen_every = get_or(t, "regen_every", tc.regen_every, "train");
    tc.warmup_epochs = get_or(t, "warmup_epochs", tc.warmup_epochs, "train");
    tc.squared_distance = get_or(t, "squared_distance", tc.squared_distance, "train");
    if (t.contains("inner_attack")) {
      check_keys(t.at("inner_attack"), "train.inner_attack",
                 {"norm", "epsilon", "alpha", "iters", "restarts", "momentum_decay"});
      tc.inner_attack = parse_attack_config(t.at("inner_attack"), "train.inner_attack", tc.inner_attack);
    }
  }
  tc.seed = cfg.seed;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }

  if (j.contains("attacks")) {
    if (!j.at("attacks").is_array()) throw ConfigError("attacks must be a list");
    std::set<std::string> names;
    for (const auto& a : j.at("attacks")) {
      const std::string where = "attacks[" + std::to_string(cfg.attacks.size()) + "]";
      check_keys(a, where,
                 {"name", "method", "norm", "epsilon", "alpha", "iters", "restarts", "momentum_decay",
                  "targeted", "adaptive", "alpha_grid", "kappa_range", "cw_searches", "nes_sigma",
                  "nes_samples", "max_queries", "boundary_iters", "surrogate_hidden"});
      AttackSpec s;
      s.name = get_req<std::string>(a, "name", where);
      if (s.name.empty() || s.name.find_first_of("/\\. ") != std::string::npos) {
        throw ConfigError(where + ".name must be a plain identifier");
      }
      if (!names.insert(s.name).second) throw ConfigError("duplicate attack name " + s.name);
      s.method = parse_attack_method(get_req<std::string>(a, "method", where));
      s.cfg = parse_attack_config(a, where, AttackConfig{});
      s.targeted = get_or(a, "targeted", false, where);
      s.adaptive = get_or(a, "adaptive", true, where);
      s.alpha_grid = get_or(a, "alpha_grid", std::vector<double>{}, where);
      for (double al : s.alpha_grid) {
        if (!(al > 0.0)) throw ConfigError(where + ".alpha_grid values must be positive");
      }
      const auto kr = get_or(a, "kappa_range", std::vector<double>{0.0, 10.0}, where);
      if (kr.size() != 2 || kr[0] > kr[1]) throw ConfigError(where + ".kappa_range must be [lo, hi]");
      s.kappa_lo = kr[0];
      s.kappa_hi = kr[1];
      s.cw_searches = get_or(a, "cw_searches", s.cw_searches, where);
      s.nes_sigma = get_or(a, "nes_sigma", s.nes_sigma, where);
      s.nes_samples = get_or(a, "nes_samples", s.nes_samples, where);
      if (s.nes_samples == 0 || s.nes_samples % 2) throw ConfigError(where + ".nes_samples must be even");
      s.max_queries = get_or(a, "max_queries", s.max_queries, where);
      s.boundary_iters = get_or(a, "boundary_iters", s.boundary_iters, where);
      s.surrogate_hidden = get_or(a, "surrogate_hidden", s.surrogate_hidden, where);
      if (s.method == AttackMethod::multi_target && s.targeted) {
        throw ConfigError(where + ": multi_target is an untargeted attack");
      }
      cfg.attacks.push_back(std::move(s));
    }
  }

  if (j.contains("metrics")) {
    check_keys(j.at("metrics"), "metrics", {"p", "max_examples"});
    cfg.p_list = get_or(j.at("metrics"), "p", cfg.p_list, "metrics");
    cfg.max_examples = get_or(j.at("metrics"), "max_examples", cfg.max_examples, "metrics");
  }
  if (cfg.p_list.empty()) throw ConfigError("metrics.p must not be empty");
  for (double p : cfg.p_list) {
    if (!(p > 0.0 && p < 100.0)) throw ConfigError("metrics.p values must lie in (0, 100)");
  }
  std::sort(cfg.p_list.begin(), cfg.p_list.end());
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path);
  }
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path().string().empty()
                             ? "."
                             : fs::path(path).parent_path().string());
}

json to_json(const ExperimentConfig& cfg) {
  json ds = {{"kind", cfg.data.kind},
             {"classes", cfg.data.classes},
             {"dim", cfg.data.dim},
             {"train_per_class", cfg.data.train_per_class},
             {"calib_per_class", cfg.data.calib_per_class},
             {"test_per_class", cfg.data.test_per_class}};
  if (cfg.data.kind == "mnist") {
    // Content, not location, identifies the source files.
    ds["images_sha1"] = git_blob_sha1_file(cfg.data.images);
    ds["labels_sha1"] = git_blob_sha1_file(cfg.data.labels);
  } else {
    ds["spread"] = cfg.data.spread;
  }
  const TrainConfig& t = cfg.train;
  json train = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"momentum", t.momentum},
                {"adv_ratio", t.adv_ratio},
                {"regen_every", t.regen_every},
                {"warmup_epochs", t.warmup_epochs},
                {"squared_distance", t.squared_distance},
                {"inner_attack", attack_config_json(t.inner_attack)}};
  json attacks = json::array();
  for (const auto& s : cfg.attacks) {
    json a = attack_config_json(s.cfg);
    a["name"] = s.name;
    a["method"] = to_string(s.method);
    a["targeted"] = s.targeted;
    a["adaptive"] = s.adaptive;
    a["alpha_grid"] = s.alphas();
    a["kappa_range"] = {s.kappa_lo, s.kappa_hi};
    a["cw_searches"] = s.cw_searches;
    a["nes_sigma"] = s.nes_sigma;
    a["nes_samples"] = s.nes_samples;
    a["max_queries"] = s.max_queries;
    a["boundary_iters"] = s.boundary_iters;
    a["surrogate_hidden"] = s.surrogate_hidden;
    attacks.push_back(std::move(a));
  }
  return {{"seed", cfg.seed},
          {"dataset", ds},
          {"model", {{"hidden", cfg.hidden}}},
          {"detector", {{"mode", to_string(cfg.mode)}}},
          {"train", train},
          {"attacks", attacks},
          {"metrics", {{"p", cfg.p_list}, {"max_examples", cfg.max_examples}}}};
}

std::string config_hash(const ExperimentConfig& cfg) { return sha1_hex(to_json(cfg).dump()); }

std::vector<std::size_t> spread_indices(std::size_t n, std::size_t m) {
  std::vector<std::size_t> out;
  if (m == 0 || m >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(i * n / m);
  return out;
}

std::size_t pick_target(std::uint64_t seed, std::size_t index, std::size_t label, std::size_t k) {
  if (k < 2) throw std::invalid_argument("targeted attacks need at least two classes");
  std::size_t t = splitmix64(seed ^ splitmix64(index)) % (k - 1);
  if (t >= label) ++t;
  return t;
}

// ---- attack cells ----

CellResult run_attack_cell(const DetectorModel& det, const Dataset& train, const Dataset& test,
                           const std::vector<std::size_t>& rows, const AttackSpec& spec,
                           double alpha, std::uint64_t seed, std::size_t threads) {
  const std::size_t k = det.num_classes();
  std::optional<MlpModel> surrogate;
  if (spec.method == AttackMethod::transfer) {
    TrainConfig tc;
    tc.lr = 0.01;
    surrogate = train_surrogate(train, spec, tc, splitmix64(seed));
  }

  CellResult out;
  out.records.resize(rows.size());
  out.adversarial.resize(rows.size());

  auto run_one = [&](std::size_t slot) {
    const std::size_t row = rows[slot];
    const Array x = test.example(row);
    const std::size_t y = test.labels[row];
    ExampleRecord rec;
    rec.index = row;
    rec.label = y;
    if (spec.targeted) rec.target = pick_target(seed, row, y, k);

    AttackConfig c = spec.cfg;
    c.alpha = alpha;
    c.target = rec.target;
    c.seed = splitmix64(seed + row);

    auto objective = [&](std::optional<std::size_t> t, double kappa) {
      return spec.adaptive ? adaptive_objective(det, y, t, kappa) : base_objective(det, y, t, kappa);
    };
    auto fooled_and_evaded = [&](const Array& xa) {
      if (!within_budget(xa, x, c.norm, c.epsilon)) return false;
      const std::size_t pred = classify(det, xa);
      const bool fooled = rec.target ? pred == *rec.target : pred != y;
      return fooled && !is_detected(det, xa);
    };

    Array xa;
    switch (spec.method) {
      case AttackMethod::fgsm: {
        const AttackResult r = fgsm(det.model, objective(rec.target, 0.0), x, c.epsilon, c.norm);
        xa = r.x_adv;
        rec.final_objective = r.objective;
        break;
      }
      case AttackMethod::pgd:
      case AttackMethod::mim: {
        const AttackObjective obj = objective(rec.target, 0.0);
        const AttackResult r =
            spec.method == AttackMethod::pgd ? pgd(det.model, obj, x, c) : mim(det.model, obj, x, c);
        xa = r.x_adv;
        rec.final_objective = r.objective;
        break;
      }
      case AttackMethod::cw: {
        const AttackResult r = cw_confidence_search(
            [&](double kappa) { return pgd(det.model, objective(rec.target, kappa), x, c); },
            fooled_and_evaded, spec.kappa_lo, spec.kappa_hi, spec.cw_searches);
        xa = r.x_adv;
        rec.final_objective = r.objective;
        break;
      }
      case AttackMethod::multi_target: {
        const DetectorAttack r = multi_target_attack(det, x, y, c, spec.adaptive);
        xa = r.x_adv;
        rec.final_objective = detect_metric(det, xa);
        break;
      }
      case AttackMethod::nes: {
        const double sigma = spec.nes_sigma > 0.0 ? spec.nes_sigma : 0.001 * std::sqrt(double(x.size()));
        const BlackboxResult r = nes_attack([&](const Array& v) { return class_probabilities(det, v); }, x, y,
                                           c, sigma, spec.nes_samples, spec.max_queries);
        xa = r.x_adv;
        rec.final_objective = r.final_objective;
        rec.queries = r.queries;
        break;
      }
      case AttackMethod::boundary: {
        try {
          const BoundaryResult r = boundary_attack([&](const Array& v) { return classify(det, v); }, x, y,
                                                   spec.boundary_iters, c.seed);
          rec.queries = r.queries;
          // Minimum-distance walk in l2; the result is judged inside the
          // configured ball, so pull it back into that ball first.
          Array delta(x.shape());
          for (std::size_t i = 0; i < x.size(); ++i) delta[i] = r.x_adv[i] - x[i];
          rec.final_objective = norm_l2(delta.flat());
          delta = project(delta, c.norm, c.epsilon);
          xa = Array(x.shape());
          for (std::size_t i = 0; i < x.size(); ++i) xa[i] = std::clamp(x[i] + delta[i], 0.0, 1.0);
        } catch (const NoAdversarialStart&) {
          xa = x;
        }
        break;
      }
      case AttackMethod::transfer: {
        const AttackObjective obj = cross_entropy_objective(y, rec.target);
        const AttackResult r = pgd(*surrogate, obj, x, c);
        xa = r.x_adv;
        rec.final_objective = r.objective;
        break;
      }
    }
    std::vector<double> delta(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) delta[i] = xa[i] - x[i];
    rec.norm_used = norm_p(delta, c.norm);
    rec.success = fooled_and_evaded(xa);
    out.records[slot] = rec;
    out.adversarial[slot] = std::move(xa);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, rows.size()));
  if (workers == 1) {
    for (std::size_t s = 0; s < rows.size(); ++s) run_one(s);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t s = next++; s < rows.size(); s = next++) {
        try {
          run_one(s);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

EvalReport evaluate_cell(const DetectorModel& det, const Dataset& calib, const Dataset& test,
                         const CellResult& cell, const AttackSpec& spec, double alpha,
                         const std::vector<double>& p_list, std::uint64_t seed) {
  if (p_list.empty()) throw std::invalid_argument("p list must not be empty");
  const std::size_t k = det.num_classes();
  std::vector<double> ps = p_list;
  std::sort(ps.begin(), ps.end());
  std::vector<DetectorModel> by_p;
  for (double p : ps) by_p.push_back(calibrate_thresholds(det, calib, p));
  const DetectorModel& strict = by_p.back();

  EvalReport rep;
  rep.attack_name = spec.name;
  rep.norm = spec.cfg.norm;
  rep.epsilon = spec.cfg.epsilon;
  rep.alpha = alpha;
  rep.iters = spec.cfg.iters;
  rep.targeted = spec.targeted;
  rep.seed = seed;
  rep.n_examples = cell.records.size();

  std::vector<ClassScores> classes(k);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Array x = test.example(i);
    const std::size_t c = classify(det, x);
    classes[c].neg.push_back(auc_score(det, x, c));
  }

  std::vector<std::vector<AsrSample>> samples(ps.size());
  for (std::size_t s = 0; s < cell.records.size(); ++s) {
    const ExampleRecord& rec = cell.records[s];
    const Array x = test.example(rec.index);
    const Array& xa = cell.adversarial[s];
    const bool clean_correct = classify(det, x) == rec.label;
    const bool eligible = clean_correct && !is_detected(strict, x);
    rep.n_eligible += eligible;
    const bool in_budget = within_budget(xa, x, spec.cfg.norm, spec.cfg.epsilon);
    const std::size_t pred = classify(det, xa);
    const bool fooled = in_budget && (rec.target ? pred == *rec.target : pred != rec.label);
    if (clean_correct && in_budget && pred != rec.label) {
      classes[pred].pos.push_back(auc_score(det, xa, pred));
      ++classes[pred].adv_count;
      ++rep.n_adversarial;
    }
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
      samples[pi].push_back({eligible, fooled, !is_detected(by_p[pi], xa)});
    }
  }
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    double v = NAN;
    try {
      v = asr(samples[pi]);
    } catch (const std::domain_error&) {
    }
    rep.asr_by_p[ps[pi]] = v;
  }
  if (rep.n_adversarial > 0) {
    const ErocBreakdown b = eroc_breakdown(classes);
    rep.eroc = b.eroc;
    rep.per_class_auc = b.per_class_auc;
    rep.per_class_weight = b.per_class_weight;
  } else {
    rep.eroc = NAN;
    rep.per_class_auc.assign(k, NAN);
    rep.per_class_weight.assign(k, 0.0);
  }
  return rep;
}

// ---- commands ----

void cmd_prepare(const ExperimentConfig& cfg) {
  const DatasetSpec& ds = cfg.data;
  const std::size_t per_class = ds.train_per_class + ds.calib_per_class + ds.test_per_class;
  Dataset all;
  json source;
  if (ds.kind == "mnist") {
    all = load_idx(ds.images, ds.labels);
    source = {{"kind", "mnist"},
              {"images_sha1", git_blob_sha1_file(ds.images)},
              {"labels_sha1", git_blob_sha1_file(ds.labels)},
              {"examples", all.size()}};
  } else {
    all = synth_blobs(ds.classes, per_class, ds.dim, ds.spread, cfg.seed);
    source = {{"kind", "blobs"}, {"classes", ds.classes}, {"dim", ds.dim}, {"spread", ds.spread}};
  }
  all.validate();
  const auto parts =
      stratified_split(all, {ds.train_per_class, ds.calib_per_class, ds.test_per_class}, cfg.seed);
  const fs::path dir = out_dir(cfg) / "data";
  fs::create_directories(dir);
  json files = json::object();
  const char* names[] = {"train", "calib", "test"};
  for (std::size_t i = 0; i < 3; ++i) {
    std::ostringstream os;
    write_csv(os, parts[i]);
    const std::string file = std::string(names[i]) + ".csv";
    write_file(dir / file, os.str());
    files[file] = {{"sha1", git_blob_sha1(os.str())}, {"rows", parts[i].size()}};
  }
  const json manifest = {{"config_hash", config_hash(cfg)},
                         {"num_classes", all.num_classes},
                         {"input_dim", all.input_dim()},
                         {"source", source},
                         {"files", files}};
  write_file(dir / "manifest.json", dump(manifest));
}

void cmd_train(const ExperimentConfig& cfg) {
  const Splits s = load_splits(cfg);
  const std::size_t k = s.train.num_classes;
  const CenterSet centers = make_centers(k);
  const MlpModel net = make_detector_network(s.train.input_dim(), cfg.hidden, k, cfg.mode, cfg.seed);
  TrainHistory history;
  DetectorModel det = cfg.mode == DetectorMode::vanilla
                          ? train_vanilla(net, centers, s.train, cfg.train, &history)
                          : train_separating(net, centers, s.train, cfg.train, cfg.mode, &history);
  det = calibrate_thresholds(std::move(det), s.calib, min_p(cfg));
  const fs::path dir = out_dir(cfg) / "model";
  fs::create_directories(dir);
  save_detector((dir / "detector.bin").string(), det);
  std::ostringstream curve;
  curve << "epoch,loss\n";
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
    curve << e << ',' << format_number(history.epoch_loss[e]) << '\n';
  }
  write_file(dir / "training_curve.csv", curve.str());
}

void cmd_attack(const ExperimentConfig& cfg) {
  const Splits s = load_splits(cfg);
  const DetectorModel det = load_trained(cfg);
  const std::string det_sha = git_blob_sha1_file((out_dir(cfg) / "model" / "detector.bin").string());
  const std::vector<std::size_t> rows = spread_indices(s.test.size(), cfg.max_examples);
  const std::string chash = config_hash(cfg);
  for (const auto& spec : cfg.attacks) {
    const auto alphas = spec.alphas();
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
      const fs::path dir = cell_dir(cfg, spec, ai);
      const std::string key = sha1_hex(chash + det_sha + spec.name + std::to_string(ai));
      if (fs::exists(dir / "records.json") && fs::exists(dir / "adversarial.csv")) {
        const json prev = read_json(dir / "records.json");
        if (prev.value("cell_key", "") == key) continue;  // resume: cell already done
      }
      const std::uint64_t seed = cell_seed(cfg.seed, spec, ai);
      const CellResult cell = run_attack_cell(det, s.train, s.test, rows, spec, alphas[ai], seed, cfg.threads);
      Dataset adv;
      adv.num_classes = det.num_classes();
      adv.inputs = Array({cell.adversarial.size(), s.test.input_dim()});
      for (std::size_t i = 0; i < cell.adversarial.size(); ++i) {
        std::copy(cell.adversarial[i].flat().begin(), cell.adversarial[i].flat().end(), adv.inputs.row(i).begin());
        adv.labels.push_back(cell.records[i].label);
      }
      std::ostringstream csv;
      write_csv(csv, adv);
      json recs = json::array();
      for (const auto& r : cell.records) recs.push_back(record_json(r));
      // adversarial.csv first so a crash never leaves records without inputs
      write_file(dir / "adversarial.csv", csv.str());
      write_file(dir / "records.json", dump({{"cell_key", key},
                                             {"attack", spec.name},
                                             {"alpha", alphas[ai]},
                                             {"seed", seed},
                                             {"records", recs}}));
    }
  }
}

void cmd_eval(const ExperimentConfig& cfg) {
  const Splits s = load_splits(cfg);
  const DetectorModel det = load_trained(cfg);
  json sweep = json::array();
  std::vector<EvalReport> worst;
  for (const auto& spec : cfg.attacks) {
    const auto alphas = spec.alphas();
    std::vector<EvalReport> per_alpha;
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
      const fs::path dir = cell_dir(cfg, spec, ai);
      if (!fs::exists(dir / "records.json")) {
        throw DataError(DataErrorCode::missing_file, "missing attack results in " + dir.string() + " (run attack)");
      }
      const CellResult cell = load_cell(dir, det.num_classes());
      per_alpha.push_back(
          evaluate_cell(det, s.calib, s.test, cell, spec, alphas[ai], cfg.p_list, cell_seed(cfg.seed, spec, ai)));
      sweep.push_back(to_json(per_alpha.back()));
    }
    std::size_t next = 0;
    worst.push_back(sweep_worst_case([&](double, std::size_t) { return per_alpha[next++]; }, alphas, spec.cfg.iters));
  }
  json reports = json::array();
  for (const auto& r : worst) reports.push_back(to_json(r));
  const fs::path dir = out_dir(cfg) / "eval";
  const json meta = {{"config_hash", config_hash(cfg)},
                     {"detector_mode", to_string(cfg.mode)},
                     {"checkpoint_sha1", git_blob_sha1_file((out_dir(cfg) / "model" / "detector.bin").string())},
                     {"data_manifest_sha1", git_blob_sha1_file((out_dir(cfg) / "data" / "manifest.json").string())},
                     {"eroc_negatives", "benign test examples with the same predicted class"},
                     {"asr_eligibility", "clean-correct and undetected at the largest p"},
                     {"alpha_selection", "highest ASR at the smallest p, ties to lower EROC"}};
  write_file(dir / "eval.json", dump({{"meta", meta}, {"reports", reports}}));
  write_file(dir / "sweep.json", dump({{"meta", meta}, {"reports", sweep}}));
  std::ostringstream csv;
  write_eval_csv(csv, worst);
  write_file(dir / "eval.csv", csv.str());
}

void cmd_export_reps(const ExperimentConfig& cfg) {
  const Splits s = load_splits(cfg);
  const DetectorModel det = load_trained(cfg);
  std::vector<Array> adv;
  std::vector<std::size_t> adv_labels;
  if (!cfg.attacks.empty()) {
    const fs::path dir = cell_dir(cfg, cfg.attacks.front(), 0);
    if (fs::exists(dir / "records.json")) {
      CellResult cell = load_cell(dir, det.num_classes());
      for (std::size_t i = 0; i < cell.records.size(); ++i) {
        adv.push_back(std::move(cell.adversarial[i]));
        adv_labels.push_back(cell.records[i].label);
      }
    }
  }
  std::ostringstream os;
  write_representations(os, det, s.test, adv, adv_labels);
  write_file(out_dir(cfg) / "reps" / "representations.csv", os.str());
}

void cmd_report(const ExperimentConfig& cfg) {
  const fs::path eval_path = out_dir(cfg) / "eval" / "eval.json";
  if (!fs::exists(eval_path)) throw DataError(DataErrorCode::missing_file, "no evaluation found (run eval)");
  const json ev = read_json(eval_path);
  const json manifest = read_json(out_dir(cfg) / "data" / "manifest.json");
  std::ostringstream md;
  md << timestamp_line() << "\n\n";
  md << "# advsep report\n\n";
  md << "- config hash: `" << config_hash(cfg) << "`\n";
  md << "- detector mode: " << to_string(cfg.mode) << "\n";
  md << "- seed: " << cfg.seed << "\n";
  md << "- checkpoint sha1: `" << ev.at("meta").at("checkpoint_sha1").get<std::string>() << "`\n";
  md << "- data manifest sha1: `" << ev.at("meta").at("data_manifest_sha1").get<std::string>() << "`\n";
  for (const auto& [file, info] : manifest.at("files").items()) {
    md << "- " << file << ": " << info.at("rows").get<std::size_t>() << " rows, sha1 `"
       << info.at("sha1").get<std::string>() << "`\n";
  }
  md << "\n| attack | norm | eps | alpha | T/U |";
  for (double p : cfg.p_list) md << " ASR-" << format_percent(p) << " |";
  md << " EROC | eligible | adversarial |\n|---|---|---|---|---|";
  for (std::size_t i = 0; i < cfg.p_list.size(); ++i) md << "---|";
  md << "---|---|---|\n";
  for (const auto& rj : ev.at("reports")) {
    const EvalReport r = eval_report_from_json(rj);
    md << "| " << r.attack_name << " | " << to_string(r.norm) << " | " << format_number(r.epsilon) << " | "
       << format_number(r.alpha) << " | " << (r.targeted ? "T" : "U") << " |";
    for (double p : cfg.p_list) {
      auto it = r.asr_by_p.find(p);
      md << ' ' << (it == r.asr_by_p.end() ? std::string("-") : format_number(it->second)) << " |";
    }
    md << ' ' << format_number(r.eroc) << " | " << r.n_eligible << " | " << r.n_adversarial << " |\n";
  }
  write_file(out_dir(cfg) / "report.md", md.str());
}

}  // namespace advsep
