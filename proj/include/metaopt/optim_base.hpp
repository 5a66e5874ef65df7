// Base (weight-updating) optimizers: SGD, SGD with momentum, RMSProp, AdamW
// and Lion, each with step sizes supplied per weight.
#pragma once

#include "metaopt/core.hpp"

#include <cmath>
#include <string_view>
#include <utility>

namespace metaopt {

enum class BaseKind { sgd, sgdm, rmsprop, adamw, lion };

/// Which momentum/second-moment accumulator the weight step reads for SGDm,
/// RMSProp and AdamW. Lion always reads the accumulator from before the update.
enum class MomentumTiming { post_update, pre_update };

std::string_view to_string(BaseKind k);
BaseKind base_kind_from_string(std::string_view s);
std::string_view to_string(MomentumTiming t);
MomentumTiming momentum_timing_from_string(std::string_view s);

/// Guard inside sqrt(v + eps) for normalized updates.
inline constexpr double kDenominatorEps = 1e-12;

struct BaseConfig {
  BaseKind kind = BaseKind::adamw;
  double rho = 0.9;       ///< momentum decay
  double lambda = 0.999;  ///< squared-gradient trace decay
  double kappa = 0.0;     ///< weight decay (scaled by alpha)
  double c = 0.9;         ///< Lion interpolation
  bool bias_correction = true;
  MomentumTiming momentum_timing = MomentumTiming::post_update;

  /// Tuned image-classification defaults (AdamW: rho .9, lambda .999,
  /// kappa .1; Lion: rho .99, c .9, kappa .1; ...). Plain SGD has no decay.
  static BaseConfig defaults(BaseKind kind);

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool uses_momentum() const noexcept {
    return kind == BaseKind::sgdm || kind == BaseKind::adamw || kind == BaseKind::lion;
  }
  bool uses_second_moment() const noexcept {
    return kind == BaseKind::rmsprop || kind == BaseKind::adamw;
  }

  friend bool operator==(const BaseConfig&, const BaseConfig&) = default;
};

template <typename Scalar>
struct BaseStateT {
  VectorX<Scalar> w;
  VectorX<Scalar> m;  ///< momentum
  VectorX<Scalar> v;  ///< squared-gradient trace
  long t = 0;         ///< completed steps

  static BaseStateT initial(VectorX<Scalar> w0) {
    BaseStateT s;
    s.m = VectorX<Scalar>::Zero(w0.size());
    s.v = VectorX<Scalar>::Zero(w0.size());
    s.w = std::move(w0);
    return s;
  }
  Index size() const noexcept { return w.size(); }
};

using BaseState = BaseStateT<double>;

template <typename Scalar>
constexpr Scalar sign_of(Scalar x) noexcept {
  return static_cast<Scalar>((Scalar(0) < x) - (x < Scalar(0)));
}

/// Bias-correction factor sqrt(1 - lambda^t) / (1 - rho^t) at 1-based step t.
inline double bias_correction_factor(double rho, double lambda, long t) {
  const double td = static_cast<double>(t);
  return std::sqrt(1.0 - std::pow(lambda, td)) / (1.0 - std::pow(rho, td));
}

/// One base update, in place. Writes delta_w, which is exactly the realized
/// w' - w. Throws NumericError (carrying the step index) on non-finite w'.
///
///   m' = rho m + (1-rho) g,  v' = lambda v + (1-lambda) g^2
///   sgd     dw = -a g                        - kappa a w
///   sgdm    dw = -a m'                       - kappa a w
///   rmsprop dw = -a g / sqrt(v' + eps)       - kappa a w
///   adamw   dw = -a mu m' / sqrt(v' + eps)   - kappa a w
///   lion    dw = -a Sign(c m + (1-c) g)      - kappa a w
template <typename Scalar, typename GradT, typename AlphaT, typename DeltaT>
void base_step(const BaseConfig& cfg, BaseStateT<Scalar>& state,
               const Eigen::MatrixBase<GradT>& grad, const Eigen::MatrixBase<AlphaT>& alpha,
               Eigen::MatrixBase<DeltaT>& delta_w) {
  const Index n = state.size();
  require_same_size(grad.size(), n, "base_step grad");
  require_same_size(alpha.size(), n, "base_step alpha");
  require_same_size(delta_w.size(), n, "base_step delta_w");

  const long step_index = state.t;
  const long t1 = state.t + 1;
  const Scalar rho = Scalar(cfg.rho);
  const Scalar lam = Scalar(cfg.lambda);
  const Scalar kappa = Scalar(cfg.kappa);
  const Scalar c = Scalar(cfg.c);
  const Scalar eps = Scalar(kDenominatorEps);
  const bool post = cfg.momentum_timing == MomentumTiming::post_update;
  const Scalar mu = (cfg.kind == BaseKind::adamw && cfg.bias_correction)
                        ? Scalar(bias_correction_factor(cfg.rho, cfg.lambda, t1))
                        : Scalar(1);

  Scalar* w = state.w.data();
  Scalar* m = state.m.data();
  Scalar* v = state.v.data();
  bool finite = true;

  for (Index i = 0; i < n; ++i) {
    const Scalar g = grad[i];
    const Scalar a = alpha[i];
    Scalar step = Scalar(0);
    switch (cfg.kind) {
      case BaseKind::sgd:
        step = -a * g;
        break;
      case BaseKind::sgdm: {
        const Scalar m_new = rho * m[i] + (Scalar(1) - rho) * g;
        step = -a * (post ? m_new : m[i]);
        m[i] = m_new;
        break;
      }
      case BaseKind::rmsprop: {
        const Scalar v_new = lam * v[i] + (Scalar(1) - lam) * g * g;
        step = -a * g / std::sqrt((post ? v_new : v[i]) + eps);
        v[i] = v_new;
        break;
      }
      case BaseKind::adamw: {
        const Scalar m_new = rho * m[i] + (Scalar(1) - rho) * g;
        const Scalar v_new = lam * v[i] + (Scalar(1) - lam) * g * g;
        const Scalar mm = post ? m_new : m[i];
        const Scalar vv = post ? v_new : v[i];
        step = -a * mu * mm / std::sqrt(vv + eps);
        m[i] = m_new;
        v[i] = v_new;
        break;
      }
      case BaseKind::lion: {
        step = -a * sign_of(c * m[i] + (Scalar(1) - c) * g);
        m[i] = rho * m[i] + (Scalar(1) - rho) * g;
        break;
      }
    }
    step -= kappa * a * w[i];
    const Scalar w_new = w[i] + step;
    finite = finite && std::isfinite(static_cast<double>(w_new));
    delta_w[i] = w_new - w[i];
    w[i] = w_new;
  }
  state.t = t1;
  if (!finite) throw NumericError("base_step: non-finite weights", step_index);
}

/// Convenience overload returning delta_w.
template <typename Scalar, typename GradT, typename AlphaT>
VectorX<Scalar> base_step(const BaseConfig& cfg, BaseStateT<Scalar>& state,
                          const Eigen::MatrixBase<GradT>& grad,
                          const Eigen::MatrixBase<AlphaT>& alpha) {
  VectorX<Scalar> delta(state.size());
  base_step(cfg, state, grad, alpha, delta);
  return delta;
}

/// Hessian-free Jacobian pieces of one base step:
///   a_diag = 1 - kappa alpha  (diagonal of dw'/dw once Hessian terms vanish)
///   b_col  = delta_w          (dw'/dbeta under the exponential map, before
///                              grouping by block)
template <typename Scalar>
struct HessianFreeJacobians {
  VectorX<Scalar> a_diag;
  VectorX<Scalar> b_col;
};

template <typename Scalar, typename AlphaT, typename DeltaT>
HessianFreeJacobians<Scalar> hf_jacobians(const BaseConfig& cfg, const BaseStateT<Scalar>& state,
                                          const Eigen::MatrixBase<AlphaT>& alpha,
                                          const Eigen::MatrixBase<DeltaT>& delta_w) {
  require_same_size(alpha.size(), state.size(), "hf_jacobians alpha");
  require_same_size(delta_w.size(), state.size(), "hf_jacobians delta_w");
  HessianFreeJacobians<Scalar> out;
  out.a_diag = (Scalar(1) - Scalar(cfg.kappa) * alpha.array()).matrix();
  out.b_col = delta_w;
  return out;
}

}  // namespace metaopt
