// The map from meta-parameters beta (one per block) to per-weight step sizes.
#pragma once

#include "metaopt/core.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <string_view>

namespace metaopt {

enum class MapKind { exponential, identity };

std::string_view to_string(MapKind k);
MapKind map_kind_from_string(std::string_view s);

/// Bounds applied to beta before exponentiation.
inline constexpr double kBetaMin = -60.0;
inline constexpr double kBetaMax = 20.0;

/// alpha = sigma(beta), with sigma elementwise per block:
///   exponential: alpha_i = exp(beta[block(i)])   (always positive)
///   identity:    alpha_i = beta[block(i)]        (additive hypergradient form)
struct StepSizeMap {
  MapKind kind = MapKind::exponential;
  BlockPartition partition;

  int beta_dim() const noexcept { return partition.block_count(); }
  Index weight_dim() const noexcept { return partition.size(); }
};

namespace detail {

template <typename Scalar>
Scalar clamp_beta(Scalar b, bool& clamped) {
  if (b < Scalar(kBetaMin)) {
    clamped = true;
    return Scalar(kBetaMin);
  }
  if (b > Scalar(kBetaMax)) {
    clamped = true;
    return Scalar(kBetaMax);
  }
  return b;
}

// Per-block alpha values (length m). Clamping is reported, never silent.
template <typename Derived>
VectorX<typename Derived::Scalar> block_alpha(const StepSizeMap& map,
                                              const Eigen::MatrixBase<Derived>& beta) {
  using Scalar = typename Derived::Scalar;
  require_same_size(beta.size(), map.beta_dim(), "map_alpha");
  VectorX<Scalar> out(beta.size());
  if (map.kind == MapKind::identity) {
    out = beta;
    return out;
  }
  bool clamped = false;
  for (Index j = 0; j < beta.size(); ++j) {
    if (!std::isfinite(static_cast<double>(beta[j]))) {
      throw NumericError("map_alpha: non-finite beta in block " + std::to_string(j), -1);
    }
    out[j] = std::exp(clamp_beta(beta[j], clamped));
  }
  // first occurrence at warn level, the rest at debug
  static std::atomic<bool> reported{false};
  if (clamped) {
    const auto level = reported.exchange(true) ? spdlog::level::debug : spdlog::level::warn;
    spdlog::log(level, "step-size map: beta clamped to [{}, {}] before exponentiation", kBetaMin,
                kBetaMax);
  }
  return out;
}

}  // namespace detail

template <typename Derived>
VectorX<typename Derived::Scalar> map_alpha(const StepSizeMap& map,
                                            const Eigen::MatrixBase<Derived>& beta) {
  return broadcast_blocks(detail::block_alpha(map, beta), map.partition);
}

/// Writes sigma(beta) into a preallocated n-vector.
template <typename Derived, typename Out>
void map_alpha_into(const StepSizeMap& map, const Eigen::MatrixBase<Derived>& beta,
                    Eigen::MatrixBase<Out>& out) {
  broadcast_blocks_into(detail::block_alpha(map, beta), map.partition, out);
}

/// Diagonal of d alpha_i / d beta_{block(i)}; sigma' has exactly one non-zero
/// per row under a block structure.
template <typename Derived>
VectorX<typename Derived::Scalar> map_jacobian_diag(const StepSizeMap& map,
                                                    const Eigen::MatrixBase<Derived>& beta) {
  using Scalar = typename Derived::Scalar;
  if (map.kind == MapKind::identity) {
    require_same_size(beta.size(), map.beta_dim(), "map_jacobian_diag");
    return VectorX<Scalar>::Ones(map.weight_dim());
  }
  return map_alpha(map, beta);
}

/// First and second derivatives of sigma for a block, expressed through the
/// block's alpha value (for the exponential map both equal alpha).
inline double map_derivative(MapKind kind, double alpha) {
  return kind == MapKind::exponential ? alpha : 1.0;
}
inline double map_second_derivative(MapKind kind, double alpha) {
  return kind == MapKind::exponential ? alpha : 0.0;
}

}  // namespace metaopt
