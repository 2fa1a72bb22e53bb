#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "advsep/array.hpp"

namespace advsep::detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("truncated checkpoint");
  return v;
}

inline void write_array(std::ostream& os, const Array& a) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.ndim()));
  for (std::size_t e : a.shape()) write_pod<std::uint64_t>(os, e);
  os.write(reinterpret_cast<const char*>(a.storage().data()),
           static_cast<std::streamsize>(a.size() * sizeof(double)));
}

inline Array read_array(std::istream& is) {
  const auto ndim = read_pod<std::uint32_t>(is);
  if (ndim > 8) throw FormatError("implausible array rank " + std::to_string(ndim));
  std::vector<std::size_t> shape(ndim);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    n *= e;
  }
  if (n > (std::size_t{1} << 32)) throw FormatError("implausible array size");
  std::vector<double> data(n);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw FormatError("truncated checkpoint array");
  return Array(std::move(shape), std::move(data));
}

inline void expect_magic(std::istream& is, const std::string& magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw FormatError("bad checkpoint magic, expected " + magic);
}

}  // namespace advsep::detail
