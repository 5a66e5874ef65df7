// Step-size methods contained in the framework (IDBD, its non-quadratic
// extension, additive hypergradient descent) and fixed-step reference runs.
#pragma once

#include "metaopt/core.hpp"
#include "metaopt/engine.hpp"
#include "metaopt/optim_base.hpp"
#include "metaopt/tasks.hpp"

namespace metaopt {

/// Weightwise IDBD state.
struct IdbdState {
  Vector w;
  Vector beta;
  Vector h;
  double eta = kDefaultMetaStepSize;

  static IdbdState initial(Vector w0, Vector beta0, double eta);
};

/// g = (a.w - b) a;  beta' = beta - eta h g;  alpha' = exp(beta');
/// w' = w - alpha' g;  h' = (1 - alpha' a^2)^+ h - alpha' g
void idbd_step(IdbdState& s, const Vector& a, double b);

/// Non-quadratic extension with a full n x n trace:
/// beta' = beta - eta H^T grad;  alpha' = exp(beta');  w' = w - alpha' grad;
/// H' = (I - diag(alpha') Hess) H - diag(alpha' grad)
struct IdbdNnState {
  Vector w;
  Vector beta;
  Matrix H;
  double eta = kDefaultMetaStepSize;

  static IdbdNnState initial(Vector w0, Vector beta0, double eta);
};

void idbd_nn_step(IdbdNnState& s, const LossOracle& f);

/// Additive hypergradient descent with scalar beta (alpha = beta) around any
/// base optimizer: beta' = beta - eta H^T grad, H' = dw'/dbeta = delta_w / alpha.
struct HypergradientState {
  BaseState base;
  double beta = 0.0;
  Vector H;
  double eta = kDefaultMetaStepSize;

  static HypergradientState initial(Vector w0, double beta0, double eta);
};

/// Returns the loss at the pre-update weights.
double hypergradient_step(HypergradientState& s, const LossOracle& f, const BaseConfig& base);

/// Plain base optimizer with constant alpha, emitting the shared record schema.
RunResult fixed_step_run(const BaseConfig& base, double alpha, const LossStream& stream, long steps,
                         const RunOptions& opts = {});

}  // namespace metaopt
