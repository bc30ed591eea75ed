#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fedsdwc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using LabelVec = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AggregationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed derivation used everywhere: hash(master, label, indices). Every
// derived stream is a pure function of the master seed, so a whole run is
// reproducible from the resolved config alone.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t i0 = 0, std::uint64_t i1 = 0) {
  std::uint64_t h = splitmix64(master);
  for (unsigned char ch : label) h = splitmix64(h ^ ch);
  h = splitmix64(h ^ i0);
  h = splitmix64(h ^ i1);
  return h;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace fedsdwc
