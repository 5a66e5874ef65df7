// One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
#include "metaopt/baselines.hpp"
#include "metaopt/engine.hpp"
#include "metaopt/verify.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

using namespace metaopt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

EngineConfig sgd_engine(Variant v, double gamma, double eta, Index n) {
  EngineConfig c;
  c.variant = v;
  c.gamma = gamma;
  c.base = BaseConfig::defaults(BaseKind::sgd);
  c.meta = MetaConfig::defaults(MetaKind::sgd);
  c.meta.eta = eta;
  c.map.partition = BlockPartition::scalar(n);
  return c;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

// ---------------------------------------------------------------------------
// 1. exact trace against the forward-view finite differences

constexpr double kC1Tol = 1e-4;
constexpr double kC1Seconds = 5.0;

Outcome fidelity() {
  const auto t0 = Clock::now();
  StreamConfig sc;
  sc.dimension = 3;
  sc.noise = 0.0;
  sc.min_curvature = 0.2;
  sc.target_scale = 2.0;
  sc.seed = 101;
  const auto stream = make_stream(sc);
  const EngineConfig cfg = sgd_engine(Variant::exact_full_g, 0.9, 1e-4, 3);
  const Vector beta0 = Vector::Constant(1, std::log(0.3));

  double worst_h = 0.0, worst_z = 0.0;
  Engine e(cfg, stream->initial_weights(), beta0);
  for (long tau = 1; tau <= 20; ++tau) {
    e.step(*stream->next_loss(tau - 1));
    const Vector& x = std::get<ExactTrace>(e.trace()).X;
    const ForwardViewEstimate fv =
        forward_view_oracle(cfg, *stream, beta0, tau, {.epsilon = 1e-5, .initial_meta_trace = cfg.initial_meta_trace});
    const double z = x.dot(stream->next_loss(tau)->grad(e.weights()));
    worst_h = std::max(worst_h, rel_err(x, fv.H.col(0)));
    worst_z = std::max(worst_z, std::abs(z - fv.surrogate[0]) / std::max(1e-300, std::abs(fv.surrogate[0])));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max(worst_h, worst_z);
  return {worst <= kC1Tol && secs < kC1Seconds,
          fmt::format("tau 1..20, max rel err trace {:.2e} surrogate {:.2e} (tol {:g}), {:.3f} s (limit {:g} s)",
                      worst_h, worst_z, kC1Tol, secs, kC1Seconds)};
}

// ---------------------------------------------------------------------------
// 2. hypergradient containment

constexpr double kC2Tol = 1e-12;

Outcome hypergradient_containment() {
  StreamConfig sc;
  sc.dimension = 5;
  sc.seed = 202;
  const auto stream = make_stream(sc);
  const double beta0 = 0.05, eta = 1e-3;
  double worst = 0.0;
  std::string parts;
  for (Variant v : {Variant::sgd_2x2, Variant::exact_full_g}) {
    EngineConfig c = sgd_engine(v, 0.0, eta, 5);
    c.map.kind = MapKind::identity;
    auto a = engine_runnable(c, *stream, Vector::Constant(1, beta0));
    auto b = hypergradient_runnable(*stream, c.base, beta0, eta);
    const double dev = equivalence_run(*a, *b, 200).max_deviation;
    worst = std::max(worst, dev);
    parts += fmt::format(" {} {:.2e}", to_string(v), dev);
  }
  return {worst <= kC2Tol, fmt::format("200 steps, max deviation{} (tol {:g})", parts, kC2Tol)};
}

// ---------------------------------------------------------------------------
// 3. IDBD containment

constexpr double kC3Tol = 1e-9;

Outcome idbd_containment() {
  StreamConfig sc;
  sc.kind = StreamKind::idbd_features;
  sc.dimension = 4;
  sc.noise = 0.1;
  sc.switch_period = 100;
  sc.seed = 303;
  const auto stream = make_stream(sc);
  EngineConfig c = sgd_engine(Variant::l_approx, 1.0, 1e-2, 4);
  c.map.partition = BlockPartition::identity(4);
  c.order = UpdateOrder::beta_then_w;
  c.diagonal_hessian = true;
  c.rectify = true;
  const Vector beta0 = Vector::Constant(4, std::log(0.05));
  auto a = engine_runnable(c, *stream, beta0);
  auto b = idbd_runnable(*stream, beta0, c.meta.eta);
  const EquivalenceReport r = equivalence_run(*a, *b, 500);
  return {r.max_deviation <= kC3Tol,
          fmt::format("500 steps, n=4, max deviation {:.2e} (tol {:g})", r.max_deviation, kC3Tol)};
}

// ---------------------------------------------------------------------------
// 4. freeze equivalence

Outcome freeze() {
  StreamConfig sc;
  sc.dimension = 10;
  sc.seed = 404;
  const auto stream = make_stream(sc);
  const long steps = 1000;
  const Vector beta0 = Vector::Constant(1, std::log(0.02));
  const double alpha = std::exp(beta0[0]);

  auto plain = [&](const BaseConfig& base) {
    std::vector<Vector> traj;
    BaseState s = BaseState::initial(stream->initial_weights());
    const Vector a = Vector::Constant(s.size(), alpha);
    for (long t = 0; t < steps; ++t) {
      base_step(base, s, stream->next_loss(t)->grad(s.w), a);
      traj.push_back(s.w);
    }
    return traj;
  };
  auto matches = [&](EngineConfig c, const std::vector<Vector>& ref) {
    c.meta.eta = 0.0;
    Engine e(c, stream->initial_weights(), beta0);
    for (long t = 0; t < steps; ++t) {
      e.step(*stream->next_loss(t));
      if (e.weights() != ref[static_cast<std::size_t>(t)] || e.beta() != beta0) return false;
    }
    return true;
  };

  int checked = 0;
  std::vector<std::string> failed;
  for (BaseKind b : {BaseKind::sgd, BaseKind::sgdm, BaseKind::rmsprop, BaseKind::adamw, BaseKind::lion}) {
    const BaseConfig base = BaseConfig::defaults(b);
    const auto ref = plain(base);
    for (MetaKind m : {MetaKind::sgd, MetaKind::adam, MetaKind::lion}) {
      EngineConfig c;
      c.base = base;
      c.meta = MetaConfig::defaults(m);
      c.map.partition = BlockPartition::scalar(10);
      ++checked;
      if (!matches(c, ref)) failed.push_back(fmt::format("hessian_free/{}/{}", to_string(b), to_string(m)));
    }
    if (b == BaseKind::sgd) {
      for (Variant v : {Variant::sgd_2x2, Variant::l_approx, Variant::exact_full_g}) {
        ++checked;
        if (!matches(sgd_engine(v, 1.0, 0.0, 10), ref)) failed.push_back(std::string(to_string(v)));
      }
    }
  }
  std::string detail = fmt::format("{} variant/optimizer pairs x {} steps, bit-exact weights", checked, steps);
  for (const auto& f : failed) detail += " FAILED:" + f;
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------------------
// 5. backward view approaches the forward view as eta shrinks

Outcome limit_trend() {
  StreamConfig sc;
  sc.dimension = 3;
  sc.noise = 0.0;
  sc.min_curvature = 0.2;
  sc.target_scale = 2.0;
  sc.seed = 505;
  const auto stream = make_stream(sc);
  const long T = 50;
  const double beta0 = std::log(0.1);

  std::vector<double> gaps;
  std::string detail;
  bool converged = true;
  for (double eta : {1e-2, 1e-3, 1e-4}) {
    const EngineConfig c = sgd_engine(Variant::exact_full_g, 1.0, eta, 3);
    // Backward: after consuming f_0..f_T the engine holds the beta the
    // forward view assigns to step T.
    Engine e(c, stream->initial_weights(), Vector::Constant(1, beta0));
    for (long t = 0; t <= T; ++t) e.step(*stream->next_loss(t));
    const ForwardViewSolution fwd = forward_view_solve(c, *stream, beta0, T);
    converged = converged && fwd.converged;
    const double gap = std::abs(e.beta()[0] - fwd.beta[T]) / eta;
    gaps.push_back(gap);
    detail += fmt::format(" eta={:g}: {:.3e}", eta, gap);
  }
  const bool monotone = gaps[0] > gaps[1] && gaps[1] > gaps[2];
  return {monotone && converged, fmt::format("|beta_T(bwd) - beta_T(fwd)|/eta over T={}:{}{}", T, detail,
                                             converged ? "" : " (forward solve did not converge)")};
}

// ---------------------------------------------------------------------------
// 6. robustness to the initial step size

constexpr double kC6Ratio = 1.2;
constexpr double kC6Seconds = 120.0;
constexpr long kC6Steps = 30000;
constexpr long kC6Window = 1000;

double tail_mean(const RunResult& r) {
  if (r.aborted || r.records.size() < static_cast<std::size_t>(kC6Window)) return INFINITY;
  double s = 0.0;
  for (auto it = r.records.end() - kC6Window; it != r.records.end(); ++it) s += it->loss;
  return s / kC6Window;
}

Outcome robustness() {
  const auto t0 = Clock::now();
  StreamConfig quad;
  quad.dimension = 50;
  quad.seed = 606;
  StreamConfig mlp;
  mlp.kind = StreamKind::mlp_classification;
  mlp.noise = 0.1;
  mlp.batch = 1;
  mlp.seed = 607;

  struct Pair {
    BaseKind base;
    MetaKind meta;
  };
  const std::vector<Pair> pairs = {{BaseKind::lion, MetaKind::lion}, {BaseKind::adamw, MetaKind::adam}};
  const std::vector<double> alpha0s = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  const std::vector<double> grid = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};

  bool ok = true;
  double worst_ratio = 0.0;
  std::string detail;
  for (const StreamConfig& sc : {quad, mlp}) {
    const auto stream = make_stream(sc);
    for (const Pair& p : pairs) {
      const BaseConfig base = BaseConfig::defaults(p.base);
      double best = INFINITY;
      double best_alpha = 0.0;
      std::string fixed;
      for (double a : grid) {
        const double m = tail_mean(fixed_step_run(base, a, *stream, kC6Steps));
        fixed += fmt::format(" {:.4g}", m);
        if (m < best) {
          best = m;
          best_alpha = a;
        }
      }
      EngineConfig c;
      c.base = base;
      c.meta = MetaConfig::defaults(p.meta);
      c.meta.eta = 1e-3;
      c.gamma = 1.0;
      c.map.partition = BlockPartition::scalar(stream->dimension());
      std::string runs;
      for (double a0 : alpha0s) {
        const RunResult r = run(c, *stream, kC6Steps, initial_beta(c.map, a0));
        const double ratio = tail_mean(r) / best;
        worst_ratio = std::max(worst_ratio, ratio);
        ok = ok && ratio <= kC6Ratio;
        runs += fmt::format(" {:g}->{:.3f}(a={:.2g})", a0, ratio, std::exp(r.final_beta[0]));
      }
      detail += fmt::format("\n    {} {}/{}: fixed grid{}; best {:g}; alpha0 -> ratio (final alpha):{}",
                            to_string(sc.kind), to_string(p.base), to_string(p.meta), fixed, best_alpha, runs);
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kC6Seconds;
  return {ok, fmt::format("{} steps, worst ratio to best fixed {:.3f} (limit {:g}), {:.1f} s (limit {:g} s){}",
                          kC6Steps, worst_ratio, kC6Ratio, secs, kC6Seconds, detail)};
}

// ---------------------------------------------------------------------------
// 7. step sizes surge after task switches

constexpr long kC7Window = 100;
constexpr int kC7Switches = 10;
constexpr int kC7Required = 8;

Outcome surge() {
  StreamConfig sc;
  sc.kind = StreamKind::mlp_classification;
  sc.noise = 0.0;
  sc.batch = 1;
  sc.switch_period = 2000;
  sc.seed = 707;
  const auto stream = make_stream(sc);
  EngineConfig c;
  c.base = BaseConfig::defaults(BaseKind::adamw);
  c.meta = MetaConfig::defaults(MetaKind::adam);
  c.gamma = 0.999;
  c.map.partition = BlockPartition::scalar(stream->dimension());
  const long steps = sc.switch_period * (kC7Switches + 1);
  const RunResult r = run(c, *stream, steps, initial_beta(c.map, 1e-3));
  if (r.aborted) return {false, "run aborted: " + r.abort_reason};

  auto mean_alpha = [&](long from, long to) {
    double s = 0.0;
    for (long t = from; t < to; ++t) s += r.records[static_cast<std::size_t>(t)].alpha_mean;
    return s / static_cast<double>(to - from);
  };
  int surges = 0;
  std::string detail;
  for (int k = 1; k <= kC7Switches; ++k) {
    const long s = k * sc.switch_period;
    const double before = mean_alpha(s - kC7Window, s);
    const double after = mean_alpha(s, s + kC7Window);
    if (after > before) ++surges;
    detail += fmt::format(" {:.3f}", after / before);
  }
  return {surges >= kC7Required,
          fmt::format("{} of {} switches (need {}), after/before ratios:{}", surges, kC7Switches, kC7Required, detail)};
}

// ---------------------------------------------------------------------------
// 8. hessian-free overhead

constexpr double kC8Ratio = 1.5;

Outcome overhead() {
  const Index n = 100000;
  const long steps = 1000;
  SeededRng rng(808);
  const Vector curv = (rng.normal_vector(n).array().abs() + 0.1).matrix();
  const DiagonalQuadratic f(curv, rng.normal_vector(n));
  const Vector w0 = rng.normal_vector(n);
  const BaseConfig base = BaseConfig::defaults(BaseKind::adamw);
  const double alpha = 1e-3;

  // Both sides evaluate the gradient; the bare side then applies base_step
  // with a fixed step size.
  auto bare = [&] {
    BaseState s = BaseState::initial(w0);
    const Vector a = Vector::Constant(n, alpha);
    Vector g(n), delta(n);
    const auto t0 = Clock::now();
    for (long t = 0; t < steps; ++t) {
      f.value_and_grad(s.w, g);
      base_step(base, s, g, a, delta);
    }
    return seconds_since(t0);
  };
  auto meta = [&] {
    EngineConfig c;
    c.base = base;
    c.meta = MetaConfig::defaults(MetaKind::adam);
    c.map.partition = BlockPartition::scalar(n);
    Engine e(c, w0, Vector::Constant(1, std::log(alpha)));
    const auto t0 = Clock::now();
    for (long t = 0; t < steps; ++t) e.step(f);
    return seconds_since(t0);
  };
  // warm up, then best of five for each
  bare();
  meta();
  double tb = INFINITY, tm = INFINITY;
  for (int k = 0; k < 5; ++k) {
    tb = std::min(tb, bare());
    tm = std::min(tm, meta());
  }
  const double ratio = tm / tb;
  return {ratio <= kC8Ratio,
          fmt::format("n={}, {} steps: bare {:.3f} us/step, hessian-free {:.3f} us/step, ratio {:.3f} (limit {:g})", n,
                      steps, 1e6 * tb / steps, 1e6 * tm / steps, ratio, kC8Ratio)};
}

// ---------------------------------------------------------------------------
// 9. numeric hygiene

constexpr double kC9QuadTol = 1e-8;
constexpr double kC9MlpTol = 1e-4;
constexpr double kC9ScaleTol = 1e-6;

Outcome hygiene() {
  SeededRng rng(909);
  double quad = 0.0;
  {
    StreamConfig sc;
    sc.dimension = 50;
    sc.seed = 910;
    const auto s = make_stream(sc);
    quad = std::max(quad, grad_check(*s->next_loss(3), rng.normal_vector(50), 1e-5));
    Matrix b = Matrix::Random(6, 6);
    quad = std::max(quad, grad_check(DenseQuadratic(b.transpose() * b, rng.normal_vector(6)), rng.normal_vector(6), 1e-5));
    quad = std::max(quad, grad_check(RankOneQuadratic(rng.normal_vector(6), 0.7), rng.normal_vector(6), 1e-5));
  }
  double mlp = 0.0;
  {
    StreamConfig sc;
    sc.kind = StreamKind::mlp_classification;
    sc.batch = 16;
    sc.seed = 911;
    const auto s = make_stream(sc);
    for (long t = 0; t < 5; ++t) {
      const Vector w = s->initial_weights() + rng.normal_vector(s->dimension(), 0.3);
      mlp = std::max(mlp, grad_check(*s->next_loss(t), w, 1e-5));
    }
  }
  double scale = 0.0;
  {
    const MetaConfig cfg = MetaConfig::defaults(MetaKind::adam);
    MetaState a = MetaState::initial(Vector::Zero(4));
    MetaState b = MetaState::initial(Vector::Zero(4));
    for (int t = 0; t < 1000; ++t) {
      const Vector z = rng.normal_vector(4);
      meta_step(cfg, a, z);
      meta_step(cfg, b, (1e3 * z).eval());
    }
    scale = (a.beta - b.beta).cwiseAbs().maxCoeff();
  }
  const bool ok = quad < kC9QuadTol && mlp < kC9MlpTol && scale <= kC9ScaleTol;
  return {ok, fmt::format("grad_check quadratic {:.2e} (tol {:g}), mlp {:.2e} (tol {:g}); adam z x1e3 drift {:.2e} (tol {:g})",
                          quad, kC9QuadTol, mlp, kC9MlpTol, scale, kC9ScaleTol)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 surrogate-gradient fidelity", fidelity},
      {"2 hypergradient containment", hypergradient_containment},
      {"3 IDBD containment", idbd_containment},
      {"4 freeze equivalence", freeze},
      {"5 backward-to-forward limit trend", limit_trend},
      {"6 robustness sweep", robustness},
      {"7 nonstationary surge", surge},
      {"8 hessian-free overhead", overhead},
      {"9 numeric hygiene", hygiene},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    fmt::print("[{}] {}: {}\n", o.passed ? "PASS" : "FAIL", name, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures), criteria.size());
  return failures == 0 ? 0 : 1;
}
