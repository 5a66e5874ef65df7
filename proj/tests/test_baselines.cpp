#include "metaopt/baselines.hpp"
#include "metaopt/verify.hpp"

#include <doctest.h>

#include <cmath>

using namespace metaopt;

TEST_CASE("idbd: first step leaves beta unchanged") {
  auto s = IdbdState::initial(Vector::Zero(3), Vector::Constant(3, std::log(0.05)), 0.01);
  idbd_step(s, Vector::Ones(3), 2.0);
  CHECK(s.beta == Vector::Constant(3, std::log(0.05)));
  CHECK(s.w.norm() > 0.0);
}

TEST_CASE("idbd: a zero feature vector changes nothing") {
  auto s = IdbdState::initial(Vector::Ones(3), Vector::Constant(3, -2.0), 0.01);
  s.h << 0.1, -0.2, 0.3;
  const IdbdState before = s;
  idbd_step(s, Vector::Zero(3), 0.7);
  CHECK(s.w == before.w);
  CHECK(s.beta == before.beta);
  CHECK(s.h == before.h);
}

TEST_CASE("idbd: the rectifier clips the trace decay at zero") {
  auto s = IdbdState::initial(Vector::Zero(1), Vector::Constant(1, std::log(2.0)), 0.0);
  s.h[0] = 5.0;
  idbd_step(s, Vector::Ones(1), 1.0);
  // 1 - 2 * 1 < 0: the old trace is dropped, only -alpha g remains
  CHECK(s.h[0] == doctest::Approx(2.0));
}

TEST_CASE("idbd extension equals idbd without the rectifier on diagonal Hessians") {
  // One-hot features keep a a^T diagonal; small step sizes keep the rectifier inactive.
  const Index n = 3;
  const double eta = 0.05;
  const Vector beta0 = Vector::Constant(n, std::log(0.05));
  auto a = IdbdState::initial(Vector::Zero(n), beta0, eta);
  auto b = IdbdNnState::initial(Vector::Zero(n), beta0, eta);
  SeededRng rng(3);
  double worst = 0.0;
  for (int t = 0; t < 300; ++t) {
    Vector x = Vector::Zero(n);
    x[static_cast<Index>(rng.below(n))] = 1.0 + 0.5 * rng.uniform();
    const double y = 2.0 * x.sum() + 0.1 * rng.normal();
    idbd_step(a, x, y);
    idbd_nn_step(b, RankOneQuadratic(x, y));
    worst = std::max({worst, (a.w - b.w).cwiseAbs().maxCoeff(), (a.beta - b.beta).cwiseAbs().maxCoeff()});
  }
  CHECK(worst < 1e-12);
  CHECK((a.h - b.H.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(b.H.norm() == doctest::Approx(b.H.diagonal().norm()));
}

TEST_CASE("idbd extension matches the L approximation with full Hessian products") {
  StreamConfig sc;
  sc.dimension = 3;
  sc.seed = 17;
  sc.min_curvature = 0.1;
  const auto stream = make_stream(sc);
  EngineConfig ec;
  ec.variant = Variant::l_approx;
  ec.gamma = 1.0;
  ec.base = BaseConfig::defaults(BaseKind::sgd);
  ec.meta = MetaConfig::defaults(MetaKind::sgd);
  ec.meta.eta = 1e-2;
  ec.map.partition = BlockPartition::identity(3);
  ec.order = UpdateOrder::beta_then_w;
  const Vector beta0 = Vector::Constant(3, std::log(0.1));
  auto a = engine_runnable(ec, *stream, beta0);
  auto b = idbd_nn_runnable(*stream, beta0, ec.meta.eta);
  CHECK(equivalence_run(*a, *b, 200).max_deviation < 1e-9);
}

TEST_CASE("hypergradient: first step leaves beta unchanged") {
  auto s = HypergradientState::initial(Vector::Ones(2), 0.1, 0.01);
  hypergradient_step(s, DiagonalQuadratic(Vector::Ones(2), Vector::Zero(2)), BaseConfig::defaults(BaseKind::sgd));
  CHECK(s.beta == 0.1);
  CHECK((s.H + Vector::Ones(2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("hypergradient: same-sign gradients grow the step size") {
  auto s = HypergradientState::initial(Vector::Ones(1), 0.1, 0.01);
  const DiagonalQuadratic f(Vector::Ones(1), Vector::Zero(1));
  const BaseConfig base = BaseConfig::defaults(BaseKind::sgd);
  double prev = s.beta;
  hypergradient_step(s, f, base);
  for (int t = 0; t < 20; ++t) {
    hypergradient_step(s, f, base);
    CHECK(s.beta > prev);
    prev = s.beta;
  }
}

TEST_CASE("hypergradient wraps any base optimizer") {
  StreamConfig sc;
  sc.seed = 2;
  const auto stream = make_stream(sc);
  auto s = HypergradientState::initial(stream->initial_weights(), 1e-3, 1e-5);
  const BaseConfig base = BaseConfig::defaults(BaseKind::adamw);
  for (long t = 0; t < 500; ++t) hypergradient_step(s, *stream->next_loss(t), base);
  CHECK(std::isfinite(s.beta));
  CHECK(s.beta != 1e-3);
}

TEST_CASE("fixed-step runs equal a frozen engine") {
  StreamConfig sc;
  sc.seed = 6;
  const auto stream = make_stream(sc);
  const BaseConfig base = BaseConfig::defaults(BaseKind::rmsprop);
  // exp(ln a) need not round-trip, so the fixed run uses the engine's alpha
  const double alpha = std::exp(std::log(1e-2));
  const RunResult fixed = fixed_step_run(base, alpha, *stream, 400);
  EngineConfig ec;
  ec.base = base;
  ec.meta.eta = 0.0;
  ec.map.partition = BlockPartition::scalar(stream->dimension());
  const RunResult frozen = run(ec, *stream, 400, initial_beta(ec.map, 1e-2));
  CHECK(fixed.final_w == frozen.final_w);
  REQUIRE(fixed.records.size() == frozen.records.size());
  CHECK(fixed.records.back().loss == frozen.records.back().loss);
  CHECK_THROWS_AS(fixed_step_run(base, 0.0, *stream, 10), ConfigError);
}
