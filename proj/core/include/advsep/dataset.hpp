#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "advsep/array.hpp"

namespace advsep {

enum class DataErrorCode {
  missing_file,
  bad_image_magic,
  bad_label_magic,
  truncated_header,
  truncated_payload,
  count_mismatch,
  bad_csv,
  invalid_argument,
};

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DataErrorCode code() const { return code_; }

 private:
  DataErrorCode code_;
};

// Paired examples (rows of `inputs`, values in [0,1]) and integer labels.
struct Dataset {
  Array inputs;  // n x d
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return inputs.ndim() == 2 ? inputs.cols() : 0; }
  Array example(std::size_t i) const;
  std::vector<std::size_t> class_counts() const;

  // Throws DataError(invalid_argument) when an invariant is violated.
  void validate() const;
};

Array one_hot(std::size_t label, std::size_t dim);

// MNIST-style IDX pair: images magic 0x00000803 (u8, n x rows x cols) and
// labels magic 0x00000801. Pixels are scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a dataset whose inputs are multiples of 1/255 back to IDX files.
void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols, const std::string& images_path,
               const std::string& labels_path);

// k Gaussian clusters around fixed means in [0.25, 0.75]^dim with isotropic
// standard deviation `spread`; samples are clamped into [0,1].
Dataset synth_blobs(std::size_t k, std::size_t per_class_n, std::size_t dim, double spread,
                    std::uint64_t seed);

// Stratified split into disjoint parts holding `per_class[j]` examples of
// every class; examples keep their original relative order.
std::vector<Dataset> stratified_split(const Dataset& ds, const std::vector<std::size_t>& per_class,
                                      std::uint64_t seed);
Dataset subset(const Dataset& ds, std::size_t per_class_m, std::uint64_t seed);

// CSV with header `label,x0,...,x{d-1}`; values printed with 17 significant digits.
void write_csv(std::ostream& os, const Dataset& ds);
void write_csv(const std::string& path, const Dataset& ds);
Dataset read_csv(const std::string& path, std::size_t num_classes);

}  // namespace advsep
