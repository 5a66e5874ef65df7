#include "metaopt/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace metaopt {

void PerturbationSpec::validate() const {
  if (!(epsilon >= 1e-8 && epsilon <= 1e-2)) {
    throw ConfigError("perturbation epsilon must lie in [1e-8, 1e-2]");
  }
  if (step < 0) throw ConfigError("perturbation step must be >= 0");
}

namespace {

void require_replay(const LossStream& stream) {
  if (!stream.replayable()) {
    throw CapabilityError("forward-view oracle needs a replayable stream");
  }
}

void advance(Engine& e, const LossStream& stream, long from, long to) {
  for (long t = from; t < to; ++t) e.step(*stream.next_loss(t));
}

}  // namespace

Vector perturbation_response(const EngineConfig& cfg, const LossStream& stream,
                             const Vector& beta0, long tau, const PerturbationSpec& spec) {
  spec.validate();
  require_replay(stream);
  if (spec.step >= tau) throw ConfigError("perturbation step must precede tau");
  Engine base(cfg, stream.initial_weights(), beta0);
  advance(base, stream, 0, spec.step);
  Engine plus = base;
  Engine minus = base;
  plus.meta().beta[spec.block] += spec.epsilon;
  minus.meta().beta[spec.block] -= spec.epsilon;
  advance(plus, stream, spec.step, tau);
  advance(minus, stream, spec.step, tau);
  return (plus.weights() - minus.weights()) / (2.0 * spec.epsilon);
}

ForwardViewEstimate forward_view_oracle(const EngineConfig& cfg, const LossStream& stream,
                                        const Vector& beta0, long tau,
                                        const ForwardViewOptions& opts) {
  require_replay(stream);
  if (tau < 1) throw ConfigError("forward_view_oracle needs tau >= 1");
  const double eps = opts.epsilon;
  PerturbationSpec{0, 0, eps}.validate();
  const double gamma = cfg.gamma;
  const int m = cfg.map.beta_dim();
  const Index n = cfg.map.weight_dim();

  ForwardViewEstimate out;
  out.H = Matrix::Zero(n, m);
  Engine running(cfg, stream.initial_weights(), beta0);
  for (long t = 0; t < tau; ++t) {
    const double weight = (1.0 - gamma) * std::pow(gamma, static_cast<double>(tau - t - 1)) +
                          (t == 0 ? opts.initial_meta_trace * std::pow(gamma, static_cast<double>(tau)) : 0.0);
    for (int j = 0; j < m; ++j) {
      if (weight == 0.0) continue;
      Engine plus = running;
      Engine minus = running;
      plus.meta().beta[j] += eps;
      minus.meta().beta[j] -= eps;
      advance(plus, stream, t, tau);
      advance(minus, stream, t, tau);
      out.H.col(j) += weight * (plus.weights() - minus.weights()) / (2.0 * eps);
    }
    running.step(*stream.next_loss(t));
  }
  out.w_tau = running.weights();
  const Vector g = stream.next_loss(tau)->grad(out.w_tau);
  out.surrogate = out.H.transpose() * g;
  return out;
}

ForwardViewSolution forward_view_solve(const EngineConfig& cfg, const LossStream& stream,
                                       double beta0, long horizon, int max_iterations) {
  require_replay(stream);
  if (cfg.base.kind != BaseKind::sgd || cfg.meta.kind != MetaKind::sgd || cfg.map.beta_dim() != 1) {
    throw ConfigError("forward_view_solve needs scalar beta with sgd base and sgd meta");
  }
  if (horizon < 1) throw ConfigError("forward_view_solve needs horizon >= 1");
  const double gamma = cfg.gamma;
  const double c = gamma < 1.0 ? 1.0 - gamma : 1.0;
  const double eta = cfg.meta.eta;
  const MapKind kind = cfg.map.kind;
  const long T = horizon;

  std::vector<std::unique_ptr<LossOracle>> losses;
  for (long t = 0; t <= T; ++t) losses.push_back(stream.next_loss(t));

  ForwardViewSolution sol;
  sol.beta = Vector::Constant(T + 1, beta0);
  std::vector<Vector> w(static_cast<std::size_t>(T + 1)), g(static_cast<std::size_t>(T + 1));
  Vector alpha(T);

  for (int it = 0; it < max_iterations; ++it) {
    // Base trajectory under the current beta sequence.
    BaseConfig base = cfg.base;
    BaseState state = BaseState::initial(stream.initial_weights());
    for (long t = 0; t <= T; ++t) {
      w[t] = state.w;
      g[t] = losses[t]->grad(state.w);
      if (t == T) break;
      const Vector a = map_alpha(cfg.map, sol.beta.segment(t, 1));
      alpha[t] = a[0];
      base_step(base, state, g[t], a);
    }
    // d f_tau / d beta_t through the base dynamics.
    Vector next(T + 1);
    next[0] = beta0;
    for (long t = 0; t < T; ++t) {
      Vector J = -map_derivative(kind, alpha[t]) * g[t];
      double grad_sum = 0.0;
      double disc = 1.0;
      for (long tau = t + 1; tau <= T; ++tau) {
        grad_sum += disc * g[tau].dot(J);
        disc *= gamma;
        if (tau < T) J -= alpha[tau] * losses[tau]->hvp(w[tau], J);
      }
      next[t + 1] = next[t] - eta * c * grad_sum;
    }
    const double change = (next - sol.beta).lpNorm<Eigen::Infinity>();
    sol.beta = next;
    sol.iterations = it + 1;
    if (change <= 1e-15 * (1.0 + sol.beta.lpNorm<Eigen::Infinity>())) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

double grad_check(const LossOracle& f, const Vector& w, double eps, std::uint64_t seed) {
  if (!(eps >= 1e-8 && eps <= 1e-3)) throw ConfigError("grad_check eps must lie in [1e-8, 1e-3]");
  const Index n = w.size();
  const Vector g = f.grad(w);
  std::vector<Index> coords;
  if (n <= 200) {
    for (Index i = 0; i < n; ++i) coords.push_back(i);
  } else {
    SeededRng rng(seed);
    for (int k = 0; k < 32; ++k) coords.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  }
  double worst = 0.0;
  Vector probe = w;
  for (Index i : coords) {
    probe[i] = w[i] + eps;
    const double fp = f.value(probe);
    probe[i] = w[i] - eps;
    const double fm = f.value(probe);
    probe[i] = w[i];
    const double fd = (fp - fm) / (2.0 * eps);
    const double scale = std::max({1.0, std::abs(g[i]), std::abs(fd)});
    worst = std::max(worst, std::abs(fd - g[i]) / scale);
  }
  return worst;
}

double hvp_check(const LossOracle& f, const Vector& w, const Vector& v, double eps) {
  const Vector hv = f.hvp(w, v);
  const Vector fd = (f.grad(w + eps * v) - f.grad(w - eps * v)) / (2.0 * eps);
  const double scale = std::max({1.0, hv.lpNorm<Eigen::Infinity>(), fd.lpNorm<Eigen::Infinity>()});
  return (hv - fd).lpNorm<Eigen::Infinity>() / scale;
}

// ---------------------------------------------------------------------------

EquivalenceReport equivalence_run(Runnable& a, Runnable& b, long steps, double tolerance) {
  EquivalenceReport rep;
  for (long t = 0; t < steps; ++t) {
    a.step(t);
    b.step(t);
    const Vector wa = a.weights(), wb = b.weights();
    const Vector ba = a.beta(), bb = b.beta();
    require_same_size(wa.size(), wb.size(), "equivalence_run weights");
    require_same_size(ba.size(), bb.size(), "equivalence_run beta");
    const double dev = std::max((wa - wb).lpNorm<Eigen::Infinity>(), (ba - bb).lpNorm<Eigen::Infinity>());
    if (!(dev <= rep.max_deviation) || rep.worst_step < 0) {
      rep.max_deviation = std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev;
      rep.worst_step = t;
    }
    if (rep.first_divergence_step < 0 && !(dev <= tolerance)) rep.first_divergence_step = t;
  }
  return rep;
}

namespace {

class EngineRunnable final : public Runnable {
 public:
  EngineRunnable(const EngineConfig& cfg, const LossStream& stream, const Vector& beta0)
      : stream_(stream), engine_(cfg, stream.initial_weights(), beta0) {}
  void step(long t) override { engine_.step(*stream_.next_loss(t)); }
  Vector weights() const override { return engine_.weights(); }
  Vector beta() const override { return engine_.beta(); }

 private:
  const LossStream& stream_;
  Engine engine_;
};

class IdbdRunnable final : public Runnable {
 public:
  IdbdRunnable(const LossStream& stream, const Vector& beta0, double eta)
      : stream_(stream), s_(IdbdState::initial(stream.initial_weights(), beta0, eta)) {}
  void step(long t) override {
    const auto f = stream_.next_loss(t);
    const auto* q = dynamic_cast<const RankOneQuadratic*>(f.get());
    if (q == nullptr) throw CapabilityError("IDBD needs linear-regression (rank-one) losses");
    idbd_step(s_, q->features(), q->target());
  }
  Vector weights() const override { return s_.w; }
  Vector beta() const override { return s_.beta; }

 private:
  const LossStream& stream_;
  IdbdState s_;
};

class IdbdNnRunnable final : public Runnable {
 public:
  IdbdNnRunnable(const LossStream& stream, const Vector& beta0, double eta)
      : stream_(stream), s_(IdbdNnState::initial(stream.initial_weights(), beta0, eta)) {}
  void step(long t) override { idbd_nn_step(s_, *stream_.next_loss(t)); }
  Vector weights() const override { return s_.w; }
  Vector beta() const override { return s_.beta; }

 private:
  const LossStream& stream_;
  IdbdNnState s_;
};

class HypergradientRunnable final : public Runnable {
 public:
  HypergradientRunnable(const LossStream& stream, BaseConfig base, double beta0, double eta)
      : stream_(stream),
        base_(base),
        s_(HypergradientState::initial(stream.initial_weights(), beta0, eta)) {}
  void step(long t) override { hypergradient_step(s_, *stream_.next_loss(t), base_); }
  Vector weights() const override { return s_.base.w; }
  Vector beta() const override { return Vector::Constant(1, s_.beta); }

 private:
  const LossStream& stream_;
  BaseConfig base_;
  HypergradientState s_;
};

class FixedStepRunnable final : public Runnable {
 public:
  FixedStepRunnable(const LossStream& stream, BaseConfig base, double alpha)
      : stream_(stream),
        base_(base),
        state_(BaseState::initial(stream.initial_weights())),
        alpha_(Vector::Constant(stream.dimension(), alpha)),
        beta_(Vector::Constant(1, std::log(alpha))) {}
  void step(long t) override {
    Vector g;
    stream_.next_loss(t)->value_and_grad(state_.w, g);
    base_step(base_, state_, g, alpha_);
  }
  Vector weights() const override { return state_.w; }
  Vector beta() const override { return beta_; }

 private:
  const LossStream& stream_;
  BaseConfig base_;
  BaseState state_;
  Vector alpha_;
  Vector beta_;
};

}  // namespace

std::unique_ptr<Runnable> engine_runnable(const EngineConfig& cfg, const LossStream& stream,
                                          const Vector& beta0) {
  return std::make_unique<EngineRunnable>(cfg, stream, beta0);
}

std::unique_ptr<Runnable> idbd_runnable(const LossStream& stream, const Vector& beta0, double eta) {
  return std::make_unique<IdbdRunnable>(stream, beta0, eta);
}

std::unique_ptr<Runnable> idbd_nn_runnable(const LossStream& stream, const Vector& beta0, double eta) {
  return std::make_unique<IdbdNnRunnable>(stream, beta0, eta);
}

std::unique_ptr<Runnable> hypergradient_runnable(const LossStream& stream, const BaseConfig& base,
                                                 double beta0, double eta) {
  return std::make_unique<HypergradientRunnable>(stream, base, beta0, eta);
}

std::unique_ptr<Runnable> fixed_step_runnable(const LossStream& stream, const BaseConfig& base,
                                              double alpha) {
  return std::make_unique<FixedStepRunnable>(stream, base, alpha);
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> run_standard_checks() {
  std::vector<CheckResult> out;
  auto add = [&](std::string name, double value, double limit) {
    out.push_back({std::move(name), value, limit, value <= limit});
  };

  {
    StreamConfig sc;
    sc.dimension = 20;
    sc.seed = 11;
    const auto stream = make_stream(sc);
    SeededRng rng(3);
    add("grad_check quadratic", grad_check(*stream->next_loss(0), rng.normal_vector(20), 1e-5), 1e-8);
  }
  {
    StreamConfig sc;
    sc.kind = StreamKind::mlp_classification;
    sc.batch = 4;
    sc.noise = 0.0;
    sc.seed = 5;
    const auto stream = make_stream(sc);
    const Vector w = stream->initial_weights();
    const auto f = stream->next_loss(0);
    SeededRng rng(9);
    add("grad_check mlp", grad_check(*f, w, 1e-5), 1e-4);
    add("hvp_check mlp", hvp_check(*f, w, rng.normal_vector(w.size()), 1e-5), 1e-4);
  }
  {
    StreamConfig sc;
    sc.dimension = 3;
    sc.noise = 0.5;
    sc.min_curvature = 0.2;
    sc.seed = 21;
    const auto stream = make_stream(sc);
    EngineConfig ec;
    ec.variant = Variant::exact_full_g;
    ec.gamma = 0.9;
    ec.base = BaseConfig::defaults(BaseKind::sgd);
    ec.meta = MetaConfig::defaults(MetaKind::sgd);
    ec.meta.eta = 1e-4;
    ec.map.partition = BlockPartition::scalar(3);
    ec.initial_meta_trace = 0.0;
    const Vector beta0 = Vector::Constant(1, std::log(0.3));
    const long tau = 10;
    Engine e(ec, stream->initial_weights(), beta0);
    for (long t = 0; t < tau; ++t) e.step(*stream->next_loss(t));
    const Vector h = std::get<ExactTrace>(e.trace()).X;
    const ForwardViewEstimate fv = forward_view_oracle(ec, *stream, beta0, tau);
    add("exact trace vs forward view", (h - fv.H.col(0)).norm() / std::max(1e-300, fv.H.norm()), 1e-4);
  }
  {
    StreamConfig sc;
    sc.kind = StreamKind::idbd_features;
    sc.dimension = 4;
    sc.noise = 0.1;
    sc.switch_period = 100;
    sc.seed = 2;
    const auto stream = make_stream(sc);
    EngineConfig ec;
    ec.variant = Variant::l_approx;
    ec.gamma = 1.0;
    ec.base = BaseConfig::defaults(BaseKind::sgd);
    ec.meta = MetaConfig::defaults(MetaKind::sgd);
    ec.meta.eta = 1e-2;
    ec.map.partition = BlockPartition::identity(4);
    ec.order = UpdateOrder::beta_then_w;
    ec.diagonal_hessian = true;
    ec.rectify = true;
    const Vector beta0 = Vector::Constant(4, std::log(0.05));
    auto a = engine_runnable(ec, *stream, beta0);
    auto b = idbd_runnable(*stream, beta0, ec.meta.eta);
    add("l_approx vs idbd", equivalence_run(*a, *b, 500).max_deviation, 1e-9);
  }
  {
    StreamConfig sc;
    sc.dimension = 5;
    sc.seed = 8;
    const auto stream = make_stream(sc);
    EngineConfig ec;
    ec.variant = Variant::sgd_2x2;
    ec.gamma = 0.0;
    ec.base = BaseConfig::defaults(BaseKind::sgd);
    ec.meta = MetaConfig::defaults(MetaKind::sgd);
    ec.meta.eta = 1e-3;
    ec.map.kind = MapKind::identity;
    ec.map.partition = BlockPartition::scalar(5);
    auto a = engine_runnable(ec, *stream, Vector::Constant(1, 0.05));
    auto b = hypergradient_runnable(*stream, ec.base, 0.05, ec.meta.eta);
    add("sgd_2x2 (gamma 0) vs hypergradient", equivalence_run(*a, *b, 200).max_deviation, 1e-12);
  }
  return out;
}

}  // namespace metaopt
