#include "metaopt/baselines.hpp"

#include <chrono>
#include <cmath>

namespace metaopt {

IdbdState IdbdState::initial(Vector w0, Vector beta0, double eta) {
  require_same_size(w0.size(), beta0.size(), "IdbdState");
  IdbdState s;
  s.h = Vector::Zero(w0.size());
  s.w = std::move(w0);
  s.beta = std::move(beta0);
  s.eta = eta;
  return s;
}

void idbd_step(IdbdState& s, const Vector& a, double b) {
  const Index n = s.w.size();
  require_same_size(a.size(), n, "idbd_step");
  const double err = a.dot(s.w) - b;
  for (Index i = 0; i < n; ++i) {
    const double g = err * a[i];
    s.beta[i] = s.beta[i] - s.eta * (s.h[i] * g);
    const double alpha = std::exp(s.beta[i]);
    s.w[i] = s.w[i] - alpha * g;
    s.h[i] = std::max(1.0 - alpha * (a[i] * a[i]), 0.0) * s.h[i] - alpha * g;
  }
}

IdbdNnState IdbdNnState::initial(Vector w0, Vector beta0, double eta) {
  require_same_size(w0.size(), beta0.size(), "IdbdNnState");
  IdbdNnState s;
  s.H = Matrix::Zero(w0.size(), w0.size());
  s.w = std::move(w0);
  s.beta = std::move(beta0);
  s.eta = eta;
  return s;
}

void idbd_nn_step(IdbdNnState& s, const LossOracle& f) {
  if (!f.has_hvp()) throw CapabilityError("idbd_nn_step needs Hessian-vector products");
  const Index n = s.w.size();
  Vector g;
  f.value_and_grad(s.w, g);
  Matrix hess_h(n, n);
  for (Index j = 0; j < n; ++j) hess_h.col(j) = f.hvp(s.w, s.H.col(j));

  s.beta -= s.eta * (s.H.transpose() * g);
  const Vector alpha = s.beta.array().exp();
  s.w -= alpha.cwiseProduct(g);
  s.H -= alpha.asDiagonal() * hess_h;
  s.H.diagonal() -= alpha.cwiseProduct(g);
}

HypergradientState HypergradientState::initial(Vector w0, double beta0, double eta) {
  HypergradientState s;
  s.H = Vector::Zero(w0.size());
  s.base = BaseState::initial(std::move(w0));
  s.beta = beta0;
  s.eta = eta;
  return s;
}

double hypergradient_step(HypergradientState& s, const LossOracle& f, const BaseConfig& base) {
  Vector g;
  const double loss = f.value_and_grad(s.base.w, g);
  const Vector alpha = Vector::Constant(s.base.size(), s.beta);
  Vector delta(s.base.size());
  base_step(base, s.base, g, alpha, delta);
  const double z = s.H.dot(g);
  s.beta = s.beta - s.eta * z;
  // Delta w is linear in alpha, so delta / alpha is dw'/dbeta (zero step, zero trace).
  if (alpha[0] != 0.0) {
    s.H = delta / alpha[0];
  } else {
    s.H.setZero();
  }
  if (!std::isfinite(s.beta)) throw NumericError("hypergradient: non-finite beta", s.base.t - 1);
  return loss;
}

RunResult fixed_step_run(const BaseConfig& base, double alpha, const LossStream& stream, long steps,
                         const RunOptions& opts) {
  if (!(alpha > 0.0)) throw ConfigError("fixed step size must be > 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  base.validate();
  BaseState state = BaseState::initial(stream.initial_weights());
  const Index n = state.size();
  const Vector a = Vector::Constant(n, alpha);
  const BlockPartition scalar = BlockPartition::scalar(n);
  Vector g(n), delta(n);
  RunResult out;
  if (opts.keep_records) out.records.reserve(static_cast<std::size_t>(steps));
  for (long t = 0; t < steps; ++t) {
    try {
      const auto f = stream.next_loss(t);
      const auto t0 = std::chrono::steady_clock::now();
      StepDiagnostics d;
      d.loss = f->value_and_grad(state.w, g);
      base_step(base, state, g, a, delta);
      const auto t1 = std::chrono::steady_clock::now();
      d.alpha_block = Vector::Constant(1, alpha);
      d.beta_block = Vector::Constant(1, std::log(alpha));
      d.z = Vector::Zero(1);
      RunRecord r = make_record(t, d, scalar, stream.is_switch(t));
      if (opts.record_timing) {
        r.step_micros = std::chrono::duration<double, std::micro>(t1 - t0).count();
      }
      if (opts.on_record) opts.on_record(r);
      if (opts.keep_records) out.records.push_back(std::move(r));
    } catch (const NumericError& e) {
      out.aborted = true;
      out.abort_step = t;
      out.abort_reason = e.what();
      break;
    }
  }
  out.final_w = state.w;
  out.final_beta = Vector::Constant(1, std::log(alpha));
  return out;
}

}  // namespace metaopt
