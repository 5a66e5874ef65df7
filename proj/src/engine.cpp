#include "metaopt/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace metaopt {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::exact_full_g: return "exact_full_g";
    case Variant::sgd_2x2: return "sgd_2x2";
    case Variant::l_approx: return "l_approx";
    case Variant::hessian_free: return "hessian_free";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  if (s == "exact_full_g") return Variant::exact_full_g;
  if (s == "sgd_2x2") return Variant::sgd_2x2;
  if (s == "l_approx") return Variant::l_approx;
  if (s == "hessian_free") return Variant::hessian_free;
  throw ConfigError("unknown engine variant '" + std::string(s) + "'");
}

std::string_view to_string(UpdateOrder o) {
  return o == UpdateOrder::w_then_beta ? "w_then_beta" : "beta_then_w";
}

UpdateOrder update_order_from_string(std::string_view s) {
  if (s == "w_then_beta") return UpdateOrder::w_then_beta;
  if (s == "beta_then_w") return UpdateOrder::beta_then_w;
  throw ConfigError("unknown update order '" + std::string(s) + "'");
}

void EngineConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("engine.gamma must lie in [0, 1]");
  if (!(trace_limit > 0.0)) throw ConfigError("engine.trace_limit must be > 0");
  base.validate();
  meta.validate();
  const bool sgd_pair = base.kind == BaseKind::sgd && meta.kind == MetaKind::sgd;
  switch (variant) {
    case Variant::exact_full_g:
      if (!sgd_pair) throw ConfigError("exact_full_g needs base=sgd and meta=sgd");
      if (map.beta_dim() != 1) throw ConfigError("exact_full_g needs a scalar beta");
      if (base.kappa != 0.0) throw ConfigError("exact_full_g needs base.kappa = 0");
      if (order != UpdateOrder::w_then_beta) {
        throw ConfigError("exact_full_g supports only the w_then_beta order");
      }
      break;
    case Variant::sgd_2x2:
    case Variant::l_approx:
      if (!sgd_pair) throw ConfigError(std::string(to_string(variant)) + " needs base=sgd and meta=sgd");
      break;
    case Variant::hessian_free:
      break;
  }
  if (rectify && !diagonal_hessian) throw ConfigError("engine.rectify needs diagonal_hessian");
  if ((diagonal_hessian || rectify) && variant != Variant::l_approx) {
    throw ConfigError("diagonal_hessian and rectify apply only to l_approx");
  }
}

HFTrace HFTrace::initial(Index n, int m) {
  HFTrace t;
  t.h = Vector::Zero(n);
  t.alpha = Vector::Zero(n);
  t.grad = Vector::Zero(n);
  t.delta = Vector::Zero(n);
  t.z = Vector::Zero(m);
  return t;
}

SgdTrace SgdTrace::initial(Index n, int m, double y0) {
  SgdTrace t;
  t.H = Matrix::Zero(n, m);
  t.Y = y0 * Matrix::Identity(m, m);
  return t;
}

ExactTrace ExactTrace::initial(Index n, double y0) {
  ExactTrace t;
  t.X = Vector::Zero(n);
  t.Q = Vector::Zero(n);
  t.Y = y0;
  return t;
}

namespace {

void check_dims(const EngineConfig& cfg, const BaseState& base, const MetaState& meta,
                const LossOracle& f) {
  require_same_size(base.size(), cfg.map.weight_dim(), "engine weights vs partition");
  require_same_size(meta.size(), cfg.map.beta_dim(), "engine beta vs partition");
  require_same_size(f.dim(), base.size(), "engine loss dimension");
}

// Hessian-free fused pass: z from the pre-update h, then
// h' = gamma (1 - kappa alpha) h + b, b = dw/dbeta per weight.
double hf_fuse(const EngineConfig& cfg, HFTrace& tr) {
  const BlockPartition& p = cfg.map.partition;
  const bool identity_map = cfg.map.kind == MapKind::identity;
  const double gamma = cfg.gamma;
  const double kappa = cfg.base.kappa;
  const Index n = tr.h.size();
  double* h = tr.h.data();
  const double* a = tr.alpha.data();
  const double* g = tr.grad.data();
  const double* dw = tr.delta.data();
  double hmax = 0.0;

  auto b_of = [&](Index i) {
    if (!identity_map) return dw[i];
    return a[i] != 0.0 ? dw[i] / a[i] : 0.0;
  };

  if (p.is_scalar()) {
    // four partial sums break the add dependency chain
    double z[4] = {0.0, 0.0, 0.0, 0.0};
    Index i = 0;
    for (; i + 4 <= n; i += 4) {
      for (int k = 0; k < 4; ++k) {
        z[k] += h[i + k] * g[i + k];
        h[i + k] = gamma * (1.0 - kappa * a[i + k]) * h[i + k] + b_of(i + k);
        hmax = std::max(hmax, std::abs(h[i + k]));
      }
    }
    for (; i < n; ++i) {
      z[0] += h[i] * g[i];
      h[i] = gamma * (1.0 - kappa * a[i]) * h[i] + b_of(i);
      hmax = std::max(hmax, std::abs(h[i]));
    }
    tr.z[0] = (z[0] + z[1]) + (z[2] + z[3]);
  } else {
    tr.z.setZero();
    const int* blk = p.assignment().data();
    for (Index i = 0; i < n; ++i) {
      tr.z[blk[i]] += h[i] * g[i];
      h[i] = gamma * (1.0 - kappa * a[i]) * h[i] + b_of(i);
      hmax = std::max(hmax, std::abs(h[i]));
    }
  }
  return hmax;
}

}  // namespace

StepDiagnostics hf_step(const EngineConfig& cfg, BaseState& base, MetaState& meta, HFTrace& tr,
                        const LossOracle& f) {
  check_dims(cfg, base, meta, f);
  const long step_index = base.t;
  StepDiagnostics d;
  d.beta_block = meta.beta;

  Vector alpha_blk = detail::block_alpha(cfg.map, meta.beta);
  broadcast_blocks_into(alpha_blk, cfg.map.partition, tr.alpha);
  d.loss = f.value_and_grad(base.w, tr.grad);

  double hmax = 0.0;
  if (cfg.order == UpdateOrder::w_then_beta) {
    base_step(cfg.base, base, tr.grad, tr.alpha, tr.delta);
    hmax = hf_fuse(cfg, tr);
    meta_step(cfg.meta, meta, tr.z);
  } else {
    // z needs the pre-update h, the h update needs the post-update alpha.
    tr.z = block_sum(tr.h.cwiseProduct(tr.grad), cfg.map.partition);
    meta_step(cfg.meta, meta, tr.z);
    alpha_blk = detail::block_alpha(cfg.map, meta.beta);
    broadcast_blocks_into(alpha_blk, cfg.map.partition, tr.alpha);
    base_step(cfg.base, base, tr.grad, tr.alpha, tr.delta);
    const Vector z = tr.z;
    hmax = hf_fuse(cfg, tr);
    tr.z = z;
  }
  if (!(hmax <= cfg.trace_limit)) {
    throw NumericError("hessian-free trace exceeded the divergence guard", step_index);
  }
  d.alpha_block = std::move(alpha_blk);
  d.z = tr.z;
  return d;
}

StepDiagnostics sgd2x2_step(const EngineConfig& cfg, BaseState& base, MetaState& meta,
                            SgdTrace& tr, const LossOracle& f) {
  check_dims(cfg, base, meta, f);
  const bool pinned = cfg.variant == Variant::l_approx;
  if (!cfg.diagonal_hessian && !f.has_hvp()) {
    throw CapabilityError("sgd_2x2/l_approx need Hessian-vector products");
  }
  if (cfg.diagonal_hessian && !f.has_hessian_diag()) {
    throw CapabilityError("diagonal_hessian needs the Hessian diagonal");
  }
  const long step_index = base.t;
  const BlockPartition& p = cfg.map.partition;
  const Index n = base.size();
  const int m = p.block_count();
  const double gamma = cfg.gamma;
  const double kappa = cfg.base.kappa;
  const double eta = cfg.meta.eta;

  StepDiagnostics d;
  d.beta_block = meta.beta;
  const Vector w = base.w;
  Vector g;
  d.loss = f.value_and_grad(w, g);
  const Vector z = tr.H.transpose() * g;

  // Hessian times every column of H (w-Hessian of f only; kappa enters below).
  Matrix hess_h(n, m);
  Vector hdiag;
  if (cfg.diagonal_hessian) {
    hdiag = f.hessian_diag(w);
    hess_h = hdiag.asDiagonal() * tr.H;
  } else {
    for (int j = 0; j < m; ++j) hess_h.col(j) = f.hvp(w, tr.H.col(j));
  }

  Matrix y_next;
  if (!pinned) {
    y_next = gamma * tr.Y + (1.0 - gamma) * Matrix::Identity(m, m) -
             gamma * eta * (tr.H.transpose() * hess_h);
  }

  Vector alpha_blk = detail::block_alpha(cfg.map, meta.beta);
  if (cfg.order == UpdateOrder::beta_then_w) {
    meta_step(cfg.meta, meta, z);
    alpha_blk = detail::block_alpha(cfg.map, meta.beta);
  }
  const Vector alpha = broadcast_blocks(alpha_blk, p);
  Vector delta(n);
  base_step(cfg.base, base, g, alpha, delta);

  // H' = gamma (I - diag(alpha)(Hess + kappa I)) H - diag(sigma' (g + kappa w)) E Y
  const Matrix& y_drive = tr.Y;
  Matrix h_next(n, m);
  for (int j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double hij = tr.H(i, j);
      double decay;
      if (cfg.rectify) {
        decay = std::max(1.0 - alpha[i] * (hdiag[i] + kappa), 0.0) * hij;
      } else {
        decay = hij - alpha[i] * (hess_h(i, j) + kappa * hij);
      }
      const int b = p.block_of(i);
      const double s = map_derivative(cfg.map.kind, alpha[i]);
      const double drive = s * (g[i] + kappa * w[i]) * (pinned ? (b == j ? 1.0 : 0.0) : y_drive(b, j));
      h_next(i, j) = gamma * decay - drive;
    }
  }
  if (!(h_next.lpNorm<Eigen::Infinity>() <= cfg.trace_limit) || !h_next.allFinite()) {
    throw NumericError("2x2 trace exceeded the divergence guard", step_index);
  }
  tr.H = std::move(h_next);
  if (pinned) {
    tr.Y.setIdentity(m, m);
  } else {
    tr.Y = std::move(y_next);
  }

  if (cfg.order == UpdateOrder::w_then_beta) meta_step(cfg.meta, meta, z);
  d.alpha_block = std::move(alpha_blk);
  d.z = z;
  return d;
}

StepDiagnostics l_approx_step(const EngineConfig& cfg, BaseState& base, MetaState& meta,
                              SgdTrace& trace, const LossOracle& f) {
  if (cfg.variant != Variant::l_approx) throw ConfigError("l_approx_step needs variant l_approx");
  return sgd2x2_step(cfg, base, meta, trace, f);
}

StepDiagnostics exact_step(const EngineConfig& cfg, BaseState& base, MetaState& meta,
                           ExactTrace& tr, const LossOracle& f) {
  check_dims(cfg, base, meta, f);
  if (!f.is_quadratic() || !f.has_hvp()) {
    throw CapabilityError("exact_full_g needs a quadratic loss with Hessian-vector products");
  }
  const long step_index = base.t;
  const double gamma = cfg.gamma;
  const double eta = cfg.meta.eta;

  StepDiagnostics d;
  d.beta_block = meta.beta;
  const Vector w = base.w;
  Vector g;
  d.loss = f.value_and_grad(w, g);

  const Vector alpha_blk = detail::block_alpha(cfg.map, meta.beta);
  const double a = alpha_blk[0];
  const double s = map_derivative(cfg.map.kind, a);
  const double s2 = map_second_derivative(cfg.map.kind, a);
  const Vector alpha = Vector::Constant(base.size(), a);
  Vector delta(base.size());
  base_step(cfg.base, base, g, alpha, delta);

  const Vector z = Vector::Constant(1, tr.X.dot(g));
  const Vector hx = f.hvp(w, tr.X);
  const Vector hq = f.hvp(w, tr.Q);
  const double yt = gamma * tr.Y + (1.0 - gamma);

  // stack' = G_t (gamma stack + (1 - gamma) [1; 0; 0]), the trace row using h = X_t.
  const double y_next = yt - eta * gamma * tr.X.dot(hx) - eta * gamma * g.dot(tr.Q);
  Vector x_next = -s * yt * g + gamma * (tr.X - a * hx);
  Vector q_next = (-gamma * s * hx - s2 * yt * g) * yt - gamma * s * yt * hx +
                  gamma * gamma * (tr.Q - a * hq);
  if (!std::isfinite(y_next) || !x_next.allFinite() || !q_next.allFinite() ||
      x_next.lpNorm<Eigen::Infinity>() > cfg.trace_limit) {
    throw NumericError("exact trace exceeded the divergence guard", step_index);
  }

  meta_step(cfg.meta, meta, z);
  tr.X = std::move(x_next);
  tr.Q = std::move(q_next);
  tr.Y = y_next;

  d.alpha_block = alpha_blk;
  d.z = z;
  return d;
}

// ---------------------------------------------------------------------------

Engine::Engine(EngineConfig cfg, Vector w0, Vector beta0) : cfg_(std::move(cfg)) {
  cfg_.validate();
  require_same_size(w0.size(), cfg_.map.weight_dim(), "Engine w0");
  require_same_size(beta0.size(), cfg_.map.beta_dim(), "Engine beta0");
  const Index n = w0.size();
  const int m = cfg_.map.beta_dim();
  base_ = BaseState::initial(std::move(w0));
  meta_ = MetaState::initial(std::move(beta0));
  switch (cfg_.variant) {
    case Variant::hessian_free:
      trace_ = HFTrace::initial(n, m);
      break;
    case Variant::sgd_2x2:
    case Variant::l_approx:
      trace_ = SgdTrace::initial(n, m, cfg_.variant == Variant::l_approx ? 1.0 : cfg_.initial_meta_trace);
      break;
    case Variant::exact_full_g:
      trace_ = ExactTrace::initial(n, cfg_.initial_meta_trace);
      break;
  }
}

StepDiagnostics Engine::step(const LossOracle& f) {
  return std::visit(
      [&](auto& tr) -> StepDiagnostics {
        using T = std::decay_t<decltype(tr)>;
        if constexpr (std::is_same_v<T, HFTrace>) {
          return hf_step(cfg_, base_, meta_, tr, f);
        } else if constexpr (std::is_same_v<T, SgdTrace>) {
          return sgd2x2_step(cfg_, base_, meta_, tr, f);
        } else {
          return exact_step(cfg_, base_, meta_, tr, f);
        }
      },
      trace_);
}

RunRecord make_record(long step, const StepDiagnostics& d, const BlockPartition& p, bool is_switch) {
  RunRecord r;
  r.step = step;
  r.loss = d.loss;
  r.alpha_block = d.alpha_block;
  r.beta_block = d.beta_block;
  r.alpha_min = d.alpha_block.minCoeff();
  r.alpha_max = d.alpha_block.maxCoeff();
  double weighted = 0.0;
  for (int j = 0; j < p.block_count(); ++j) {
    weighted += d.alpha_block[j] * static_cast<double>(p.block_size(j));
  }
  r.alpha_mean = weighted / static_cast<double>(p.size());
  r.z_norm = d.z.norm();
  r.switch_marker = is_switch;
  return r;
}

RunResult run(const EngineConfig& cfg, const LossStream& stream, long steps, const Vector& beta0,
              const RunOptions& opts) {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  Engine engine(cfg, stream.initial_weights(), beta0);
  RunResult out;
  if (opts.keep_records) out.records.reserve(static_cast<std::size_t>(steps));
  for (long t = 0; t < steps; ++t) {
    try {
      const auto f = stream.next_loss(t);
      const auto t0 = std::chrono::steady_clock::now();
      const StepDiagnostics d = engine.step(*f);
      const auto t1 = std::chrono::steady_clock::now();
      RunRecord r = make_record(t, d, cfg.map.partition, stream.is_switch(t));
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
  out.final_w = engine.weights();
  out.final_beta = engine.beta();
  return out;
}

Vector initial_beta(const StepSizeMap& map, double alpha0) {
  if (map.kind == MapKind::exponential) {
    if (!(alpha0 > 0.0)) throw ConfigError("alpha0 must be > 0");
    return Vector::Constant(map.beta_dim(), std::log(alpha0));
  }
  return Vector::Constant(map.beta_dim(), alpha0);
}

}  // namespace metaopt
