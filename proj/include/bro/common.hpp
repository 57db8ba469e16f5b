#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bro {

using Scalar = double;
using Index = Eigen::Index;

// Row-major storage throughout: the on-disk tensor format and the channel
// regrouping semantics are defined in row-major order.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Binary masks ride in ordinary matrices with entries in {0, 1}.
using Mask = Matrix;
using LabelMap = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct DegenerateInput : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};

constexpr Scalar kTau = 6.28318530717958647692;

// splitmix64 with explicit float transforms. The sampling contracts require
// bit-identical streams across runs and thread counts, which the std <random>
// distributions do not guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  Scalar uniform() { return static_cast<Scalar>(next() >> 11) * 0x1.0p-53; }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  // bias is negligible for the small ranges used here
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  Scalar normal() {
    Scalar u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTau * uniform());
  }

 private:
  std::uint64_t state_;
};

// Derives independent substreams from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  Rng r(seed ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull)));
  r.next();
  return r.next();
}

}  // namespace bro
