#include "advsep/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace advsep {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorCode::missing_file, "cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(bytes, 4);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Array Dataset::example(std::size_t i) const {
  auto r = inputs.row(i);
  return Array::vector({r.begin(), r.end()});
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

void Dataset::validate() const {
  auto fail = [](const std::string& m) { throw DataError(DataErrorCode::invalid_argument, m); };
  if (inputs.ndim() != 2) fail("dataset inputs must be a matrix");
  if (inputs.rows() != labels.size()) fail("dataset has mismatched input and label counts");
  for (std::size_t y : labels) {
    if (y >= num_classes) fail("label " + std::to_string(y) + " outside [0, num_classes)");
  }
  for (double v : inputs.storage()) {
    if (!(v >= 0.0 && v <= 1.0)) fail("dataset input outside [0,1]");
  }
}

Array one_hot(std::size_t label, std::size_t dim) {
  if (label >= dim) throw std::out_of_range("one_hot label out of range");
  Array a({dim});
  a[label] = 1.0;
  return a;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16) {
    throw DataError(DataErrorCode::truncated_header, images_path + ": IDX image header truncated");
  }
  if (be32(img, 0) != kImageMagic) {
    throw DataError(DataErrorCode::bad_image_magic, images_path + ": not an IDX u8 image file");
  }
  if (lab.size() < 8) {
    throw DataError(DataErrorCode::truncated_header, labels_path + ": IDX label header truncated");
  }
  if (be32(lab, 0) != kLabelMagic) {
    throw DataError(DataErrorCode::bad_label_magic, labels_path + ": not an IDX u8 label file");
  }
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels) {
    throw DataError(DataErrorCode::count_mismatch, "IDX image count " + std::to_string(n) +
                                                       " differs from label count " +
                                                       std::to_string(n_labels));
  }
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) {
    throw DataError(DataErrorCode::truncated_payload, images_path + ": image payload truncated");
  }
  if (lab.size() < 8 + n) {
    throw DataError(DataErrorCode::truncated_payload, labels_path + ": label payload truncated");
  }
  Dataset ds;
  ds.inputs = Array({n, d});
  auto& data = ds.inputs.storage();
  for (std::size_t i = 0; i < n * d; ++i) data[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = n ? max_label + 1 : 0;
  return ds;
}

void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols, const std::string& images_path,
               const std::string& labels_path) {
  if (rows * cols != ds.input_dim()) {
    throw DataError(DataErrorCode::invalid_argument, "IDX geometry does not match input dim");
  }
  std::ofstream im(images_path, std::ios::binary);
  std::ofstream lb(labels_path, std::ios::binary);
  if (!im || !lb) throw DataError(DataErrorCode::missing_file, "cannot open IDX output files");
  put_be32(im, kImageMagic);
  put_be32(im, static_cast<std::uint32_t>(ds.size()));
  put_be32(im, static_cast<std::uint32_t>(rows));
  put_be32(im, static_cast<std::uint32_t>(cols));
  for (double v : ds.inputs.storage()) im.put(static_cast<char>(std::lround(v * 255.0)));
  put_be32(lb, kLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t y : ds.labels) lb.put(static_cast<char>(y));
}

Dataset synth_blobs(std::size_t k, std::size_t per_class_n, std::size_t dim, double spread,
                    std::uint64_t seed) {
  if (k < 2 || dim < 2 || !(spread > 0.0)) {
    throw DataError(DataErrorCode::invalid_argument,
                    "synth_blobs needs k >= 2, dim >= 2 and spread > 0");
  }
  // Means depend only on (k, dim) so every seed samples the same clusters.
  std::mt19937_64 mean_rng(0x5eedb10bULL + 1000003ULL * k + dim);
  std::uniform_real_distribution<double> u(0.25, 0.75);
  Array means({k, dim});
  for (double& v : means.storage()) v = u(mean_rng);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.num_classes = k;
  ds.inputs = Array({k * per_class_n, dim});
  ds.labels.resize(k * per_class_n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < per_class_n; ++j) {
      const std::size_t i = c * per_class_n + j;
      ds.labels[i] = c;
      auto row = ds.inputs.row(i);
      for (std::size_t t = 0; t < dim; ++t) {
        row[t] = std::clamp(means.at(c, t) + spread * noise(rng), 0.0, 1.0);
      }
    }
  }
  return ds;
}

std::vector<Dataset> stratified_split(const Dataset& ds, const std::vector<std::size_t>& per_class,
                                      std::uint64_t seed) {
  const std::size_t need = std::accumulate(per_class.begin(), per_class.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (by_class[c].size() < need) {
      throw DataError(DataErrorCode::invalid_argument,
                      "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                          " examples, split needs " + std::to_string(need));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> picks(per_class.size());
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t off = 0;
    for (std::size_t part = 0; part < per_class.size(); ++part) {
      picks[part].insert(picks[part].end(), idx.begin() + off, idx.begin() + off + per_class[part]);
      off += per_class[part];
    }
  }
  std::vector<Dataset> out;
  for (auto& p : picks) {
    std::sort(p.begin(), p.end());
    Dataset part;
    part.num_classes = ds.num_classes;
    part.inputs = Array({p.size(), ds.input_dim()});
    part.labels.reserve(p.size());
    for (std::size_t r = 0; r < p.size(); ++r) {
      auto src = ds.inputs.row(p[r]);
      std::copy(src.begin(), src.end(), part.inputs.row(r).begin());
      part.labels.push_back(ds.labels[p[r]]);
    }
    out.push_back(std::move(part));
  }
  return out;
}

Dataset subset(const Dataset& ds, std::size_t per_class_m, std::uint64_t seed) {
  return std::move(stratified_split(ds, {per_class_m}, seed).front());
}

void write_csv(std::ostream& os, const Dataset& ds) {
  os << "label";
  for (std::size_t j = 0; j < ds.input_dim(); ++j) os << ",x" << j;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.labels[i];
    for (double v : ds.inputs.row(i)) os << ',' << format_double(v);
    os << '\n';
  }
}

void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError(DataErrorCode::missing_file, "cannot open " + path + " for writing");
  write_csv(os, ds);
}

Dataset read_csv(const std::string& path, std::size_t num_classes) {
  std::ifstream is(path);
  if (!is) throw DataError(DataErrorCode::missing_file, "cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("label", 0) != 0) {
    throw DataError(DataErrorCode::bad_csv, path + ": missing `label,x0,...` header");
  }
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t fields = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      if (fields == 0) {
        std::size_t y = 0;
        auto [q, ec] = std::from_chars(p, comma, y);
        if (ec != std::errc() || q != comma) {
          throw DataError(DataErrorCode::bad_csv, path + ":" + std::to_string(lineno) + ": bad label");
        }
        labels.push_back(y);
      } else {
        double v = 0.0;
        auto [q, ec] = std::from_chars(p, comma, v);
        if (ec != std::errc() || q != comma) {
          throw DataError(DataErrorCode::bad_csv, path + ":" + std::to_string(lineno) + ": bad value");
        }
        values.push_back(v);
      }
      ++fields;
      p = comma + 1;
    }
    if (fields != d + 1) {
      throw DataError(DataErrorCode::bad_csv, path + ":" + std::to_string(lineno) + ": expected " +
                                                  std::to_string(d + 1) + " fields");
    }
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.inputs = Array({labels.size(), d}, std::move(values));
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

}  // namespace advsep
