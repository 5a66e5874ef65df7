// Meta optimizers: consume the block-grouped surrogate gradient z and move
// beta exactly as a first-order optimizer would move weights. No weight decay.
#pragma once

#include "metaopt/core.hpp"
#include "metaopt/optim_base.hpp"

#include <cmath>
#include <string_view>

namespace metaopt {

enum class MetaKind { sgd, adam, lion };

std::string_view to_string(MetaKind k);
MetaKind meta_kind_from_string(std::string_view s);

inline constexpr double kDefaultMetaStepSize = 1e-3;

struct MetaConfig {
  MetaKind kind = MetaKind::adam;
  double eta = kDefaultMetaStepSize;
  double rho = 0.9;      ///< momentum decay (rho-bar)
  double lambda = 0.999; ///< squared surrogate-gradient decay (lambda-bar)
  double c = 0.9;        ///< Lion interpolation (c-bar)

  /// Adam: rho .9, lambda .999; Lion: rho .99, c .9.
  static MetaConfig defaults(MetaKind kind);
  void validate() const;

  friend bool operator==(const MetaConfig&, const MetaConfig&) = default;
};

template <typename Scalar>
struct MetaStateT {
  VectorX<Scalar> beta;
  VectorX<Scalar> m;
  VectorX<Scalar> v;
  long t = 0;

  static MetaStateT initial(VectorX<Scalar> beta0) {
    MetaStateT s;
    s.m = VectorX<Scalar>::Zero(beta0.size());
    s.v = VectorX<Scalar>::Zero(beta0.size());
    s.beta = std::move(beta0);
    return s;
  }
  Index size() const noexcept { return beta.size(); }
};

using MetaState = MetaStateT<double>;

/// One meta update, in place.
///   sgd   beta' = beta - eta z
///   adam  beta' = beta - eta mu m' / sqrt(v' + eps)   (zero when m' = v' = 0)
///   lion  beta' = beta - eta Sign(c m + (1-c) z)
template <typename Scalar, typename ZT>
void meta_step(const MetaConfig& cfg, MetaStateT<Scalar>& state, const Eigen::MatrixBase<ZT>& z) {
  require_same_size(z.size(), state.size(), "meta_step z");
  const long step_index = state.t;
  const long t1 = state.t + 1;
  const Scalar eta = Scalar(cfg.eta);
  const Scalar rho = Scalar(cfg.rho);
  const Scalar lam = Scalar(cfg.lambda);
  const Scalar c = Scalar(cfg.c);
  bool finite = true;

  for (Index j = 0; j < state.size(); ++j) {
    const Scalar zj = z[j];
    Scalar& b = state.beta[j];
    switch (cfg.kind) {
      case MetaKind::sgd:
        b = b - eta * zj;
        break;
      case MetaKind::adam: {
        const Scalar m_new = rho * state.m[j] + (Scalar(1) - rho) * zj;
        const Scalar v_new = lam * state.v[j] + (Scalar(1) - lam) * zj * zj;
        state.m[j] = m_new;
        state.v[j] = v_new;
        if (m_new != Scalar(0) || v_new != Scalar(0)) {
          const Scalar mu = Scalar(bias_correction_factor(cfg.rho, cfg.lambda, t1));
          b = b - eta * mu * m_new / std::sqrt(v_new + Scalar(kDenominatorEps));
        }
        break;
      }
      case MetaKind::lion: {
        b = b - eta * sign_of(c * state.m[j] + (Scalar(1) - c) * zj);
        state.m[j] = rho * state.m[j] + (Scalar(1) - rho) * zj;
        break;
      }
    }
    finite = finite && std::isfinite(static_cast<double>(b));
  }
  state.t = t1;
  if (!finite) throw NumericError("meta_step: non-finite beta", step_index);
}

}  // namespace metaopt
