#include "advsep/report.hpp"

#include <openssl/sha.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace advsep {

namespace {

std::string to_hex(const unsigned char* digest, std::size_t n) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

nlohmann::json nan_to_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

std::string sha1_hex(std::string_view content) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(content.data()), content.size(), digest);
  return to_hex(digest, SHA_DIGEST_LENGTH);
}

std::string git_blob_sha1(std::string_view content) {
  std::string buf = "blob " + std::to_string(content.size());
  buf.push_back('\0');
  buf.append(content);
  return sha1_hex(buf);
}

std::string git_blob_sha1_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  const std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return git_blob_sha1(content);
}

std::string timestamp_line() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return std::string("generated_at: ") + buf;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_percent(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", p);
  return buf;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json asr = nlohmann::json::object();
  for (const auto& [p, v] : r.asr_by_p) asr[format_percent(p)] = nan_to_null(v);
  nlohmann::json auc = nlohmann::json::array();
  for (double a : r.per_class_auc) auc.push_back(nan_to_null(a));
  return {
      {"attack", r.attack_name},
      {"norm", to_string(r.norm)},
      {"epsilon", r.epsilon},
      {"alpha", r.alpha},
      {"iters", r.iters},
      {"targeted", r.targeted},
      {"asr", asr},
      {"eroc", nan_to_null(r.eroc)},
      {"per_class_auc", auc},
      {"per_class_weight", r.per_class_weight},
      {"n_examples", r.n_examples},
      {"n_eligible", r.n_eligible},
      {"n_adversarial", r.n_adversarial},
      {"seed", r.seed},
  };
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.attack_name = j.at("attack").get<std::string>();
  r.norm = parse_norm(j.at("norm").get<std::string>());
  r.epsilon = j.at("epsilon").get<double>();
  r.alpha = j.at("alpha").get<double>();
  r.iters = j.at("iters").get<std::size_t>();
  r.targeted = j.at("targeted").get<bool>();
  for (const auto& [p, v] : j.at("asr").items()) r.asr_by_p[std::stod(p)] = v.is_null() ? NAN : v.get<double>();
  r.eroc = j.at("eroc").is_null() ? NAN : j.at("eroc").get<double>();
  for (const auto& a : j.at("per_class_auc")) r.per_class_auc.push_back(a.is_null() ? NAN : a.get<double>());
  r.per_class_weight = j.at("per_class_weight").get<std::vector<double>>();
  r.n_examples = j.at("n_examples").get<std::size_t>();
  r.n_eligible = j.at("n_eligible").get<std::size_t>();
  r.n_adversarial = j.at("n_adversarial").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

void write_eval_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "attack,norm,eps,targeted,asr1,asr2,asr5,eroc\n";
  for (const auto& r : reports) {
    os << r.attack_name << ',' << to_string(r.norm) << ',' << format_number(r.epsilon) << ','
       << (r.targeted ? "T" : "U");
    for (double p : {1.0, 2.0, 5.0}) {
      os << ',';
      auto it = r.asr_by_p.find(p);
      if (it != r.asr_by_p.end()) os << format_number(it->second);
    }
    os << ',' << format_number(r.eroc) << '\n';
  }
}

}  // namespace advsep
