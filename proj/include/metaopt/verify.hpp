// Oracles for the engines. Forward-view finite differences, derivative checks,
// trajectory comparison between two implementations.
#pragma once

#include "metaopt/baselines.hpp"
#include "metaopt/core.hpp"
#include "metaopt/engine.hpp"
#include "metaopt/tasks.hpp"

#include <memory>
#include <string>
#include <vector>

namespace metaopt {

struct PerturbationSpec {
  long step = 0;
  int block = 0;
  double epsilon = 1e-5;

  void validate() const;
};

struct ForwardViewOptions {
  double epsilon = 1e-5;
  /// Adds gamma^tau * Y_0 * dw_tau/dbeta_0, the contribution an engine started
  /// from Y_0 carries on top of the discounted sum.
  double initial_meta_trace = 0.0;
};

struct ForwardViewEstimate {
  Matrix H;          ///< n x m finite-difference trace
  Vector surrogate;  ///< H^T grad f_tau(w_tau)
  Vector w_tau;
};

/// Finite-difference estimate of the trace at step tau:
///   (1-gamma) sum_{t<tau} gamma^{tau-t-1} (w_tau(+eps) - w_tau(-eps)) / (2 eps)
/// where +-eps is added to beta_j just before step t and the full engine
/// (base, meta and trace) is replayed on identical losses.
ForwardViewEstimate forward_view_oracle(const EngineConfig& cfg, const LossStream& stream,
                                        const Vector& beta0, long tau,
                                        const ForwardViewOptions& opts = {});

/// Centered difference of w_tau with respect to one injected beta perturbation.
Vector perturbation_response(const EngineConfig& cfg, const LossStream& stream,
                             const Vector& beta0, long tau, const PerturbationSpec& spec);

struct ForwardViewSolution {
  Vector beta;  ///< beta_0 .. beta_T
  int iterations = 0;
  bool converged = false;
};

/// The non-causal forward-view update for scalar beta, SGD base and SGD meta
/// on a deterministic stream with horizon T (losses f_1..f_T):
///   beta_{t+1} = beta_t - eta c sum_{tau=t+1..T} gamma^{tau-t-1} d f_tau / d beta_t
/// with c = 1 - gamma (or 1 when gamma = 1). Derivatives hold the other betas
/// fixed; the beta sequence is the fixed point of the update, found by iteration.
ForwardViewSolution forward_view_solve(const EngineConfig& cfg, const LossStream& stream,
                                       double beta0, long horizon, int max_iterations = 500);

/// Max over checked coordinates of |fd - g| / max(1, |g|, |fd|). All
/// coordinates when n <= 200, otherwise 32 drawn with `seed`.
double grad_check(const LossOracle& f, const Vector& w, double eps, std::uint64_t seed = 0);

/// Relative error of hvp(w, v) against a central difference of the gradient.
double hvp_check(const LossOracle& f, const Vector& w, const Vector& v, double eps);

// ---------------------------------------------------------------------------
// Trajectory comparison

/// Anything that consumes stream step t and exposes its weights and betas.
class Runnable {
 public:
  virtual ~Runnable() = default;
  virtual void step(long t) = 0;
  virtual Vector weights() const = 0;
  virtual Vector beta() const = 0;
};

struct EquivalenceReport {
  double max_deviation = 0.0;
  long worst_step = -1;
  long first_divergence_step = -1;  ///< first step whose deviation exceeds the tolerance
};

EquivalenceReport equivalence_run(Runnable& a, Runnable& b, long steps, double tolerance = 0.0);

std::unique_ptr<Runnable> engine_runnable(const EngineConfig& cfg, const LossStream& stream,
                                          const Vector& beta0);
/// Needs a stream of RankOneQuadratic losses.
std::unique_ptr<Runnable> idbd_runnable(const LossStream& stream, const Vector& beta0, double eta);
std::unique_ptr<Runnable> idbd_nn_runnable(const LossStream& stream, const Vector& beta0, double eta);
std::unique_ptr<Runnable> hypergradient_runnable(const LossStream& stream, const BaseConfig& base,
                                                 double beta0, double eta);
std::unique_ptr<Runnable> fixed_step_runnable(const LossStream& stream, const BaseConfig& base,
                                              double alpha);

// ---------------------------------------------------------------------------
// Bundled self-checks (used by `metaopt verify`)

struct CheckResult {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  bool passed = false;
};

std::vector<CheckResult> run_standard_checks();

}  // namespace metaopt
