// Dense numeric primitives shared by every engine: vector aliases, block
// partitions, seeded randomness and the error hierarchy.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaopt {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared; carries the step index where it happened
/// (-1 when the step is unknown).
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step)
      : Error(what + (step >= 0 ? " (step " + std::to_string(step) + ")" : "")),
        step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// The requested operation needs an oracle capability (hvp, Hessian, replay)
/// that the supplied object does not provide.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require_same_size(Index a, Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

// ---------------------------------------------------------------------------
// Block partitions

/// Assigns every coordinate of an n-vector to one of m blocks. Blocks need not
/// be contiguous, so layer-wise and module-wise groupings are both expressible.
class BlockPartition {
 public:
  BlockPartition() = default;

  /// Throws DimensionError unless every index lies in [0, block_count) and
  /// every block is non-empty.
  BlockPartition(std::vector<int> assignment, int block_count);

  static BlockPartition scalar(Index n);
  static BlockPartition identity(Index n);
  /// Consecutive blocks with the given sizes.
  static BlockPartition contiguous(const std::vector<Index>& sizes);

  Index size() const noexcept { return static_cast<Index>(assignment_.size()); }
  int block_count() const noexcept { return block_count_; }
  int block_of(Index i) const { return assignment_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& assignment() const noexcept { return assignment_; }
  Index block_size(int j) const { return sizes_[static_cast<std::size_t>(j)]; }
  bool is_scalar() const noexcept { return block_count_ == 1; }
  bool is_identity() const noexcept { return identity_; }

  friend bool operator==(const BlockPartition&, const BlockPartition&) = default;

 private:
  std::vector<int> assignment_;
  std::vector<Index> sizes_;
  int block_count_ = 0;
  bool identity_ = false;
};

/// out[j] = sum of v[i] over coordinates assigned to block j.
template <typename Derived>
VectorX<typename Derived::Scalar> block_sum(const Eigen::MatrixBase<Derived>& v,
                                            const BlockPartition& p) {
  using Scalar = typename Derived::Scalar;
  require_same_size(v.size(), p.size(), "block_sum");
  if (p.is_scalar()) return VectorX<Scalar>::Constant(1, v.sum());
  if (p.is_identity()) return v;
  VectorX<Scalar> out = VectorX<Scalar>::Zero(p.block_count());
  const auto& a = p.assignment();
  for (Index i = 0; i < v.size(); ++i) out[a[static_cast<std::size_t>(i)]] += v[i];
  return out;
}

/// out[i] = u[block(i)].
template <typename Derived>
VectorX<typename Derived::Scalar> broadcast_blocks(const Eigen::MatrixBase<Derived>& u,
                                                   const BlockPartition& p) {
  using Scalar = typename Derived::Scalar;
  require_same_size(u.size(), p.block_count(), "broadcast_blocks");
  if (p.is_scalar()) return VectorX<Scalar>::Constant(p.size(), u[0]);
  if (p.is_identity()) return u;
  VectorX<Scalar> out(p.size());
  const auto& a = p.assignment();
  for (Index i = 0; i < p.size(); ++i) out[i] = u[a[static_cast<std::size_t>(i)]];
  return out;
}

/// In-place broadcast into a preallocated buffer.
template <typename Derived, typename Out>
void broadcast_blocks_into(const Eigen::MatrixBase<Derived>& u, const BlockPartition& p,
                           Eigen::MatrixBase<Out>& out) {
  require_same_size(u.size(), p.block_count(), "broadcast_blocks");
  require_same_size(out.size(), p.size(), "broadcast_blocks");
  if (p.is_scalar()) {
    out.setConstant(u[0]);
    return;
  }
  const auto& a = p.assignment();
  for (Index i = 0; i < p.size(); ++i) out[i] = u[a[static_cast<std::size_t>(i)]];
}

// ---------------------------------------------------------------------------
// Randomness

/// splitmix64 finalizer; used to derive independent seeds from (seed, key).
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) noexcept {
  return mix_seed(mix_seed(seed) ^ mix_seed(key + 0x632be59bd9b4e019ULL));
}

/// 64-bit Mersenne twister with portable uniform/normal draws (the standard
/// distributions are implementation-defined, which would break cross-platform
/// reproducibility of record files).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent child stream keyed by `key`; identical (seed, key) pairs give
  /// identical streams.
  SeededRng split(std::uint64_t key) const { return SeededRng(derive_seed(seed_, key)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) { return bound == 0 ? 0 : engine_() % bound; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Vector normal_vector(Index n, double scale = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = scale * normal();
    return v;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace metaopt
