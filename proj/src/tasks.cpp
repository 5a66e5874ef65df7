#include "metaopt/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metaopt {

namespace {

constexpr std::uint64_t kStepKey = 0x5354455000000000ULL;
constexpr std::uint64_t kSegmentKey = 0x5345474d00000000ULL;
constexpr std::uint64_t kFixedKey = 0x4649584544000000ULL;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

SeededRng step_rng(const StreamConfig& cfg, long t) {
  return SeededRng(cfg.seed).split(kStepKey + static_cast<std::uint64_t>(t));
}

SeededRng segment_rng(const StreamConfig& cfg, long segment) {
  return SeededRng(cfg.seed).split(kSegmentKey + static_cast<std::uint64_t>(segment));
}

SeededRng fixed_rng(const StreamConfig& cfg) { return SeededRng(cfg.seed).split(kFixedKey); }

}  // namespace

// ---------------------------------------------------------------------------

Vector LossOracle::hvp(const Vector&, const Vector&) const {
  throw CapabilityError("loss oracle does not provide Hessian-vector products");
}

Matrix LossOracle::hessian(const Vector&) const {
  throw CapabilityError("loss oracle does not provide a dense Hessian");
}

Vector LossOracle::hessian_diag(const Vector&) const {
  throw CapabilityError("loss oracle does not provide the Hessian diagonal");
}

DiagonalQuadratic::DiagonalQuadratic(Vector curvature, Vector center)
    : d_(std::move(curvature)), c_(std::move(center)) {
  require_same_size(d_.size(), c_.size(), "DiagonalQuadratic");
}

double DiagonalQuadratic::value(const Vector& w) const {
  require_same_size(w.size(), dim(), "DiagonalQuadratic::value");
  return 0.5 * (d_.array() * (w - c_).array().square()).sum();
}

double DiagonalQuadratic::value_and_grad(const Vector& w, Vector& g) const {
  require_same_size(w.size(), dim(), "DiagonalQuadratic::value_and_grad");
  g.resize(dim());
  double f = 0.0;
  for (Index i = 0; i < dim(); ++i) {
    const double r = w[i] - c_[i];
    g[i] = d_[i] * r;
    f += g[i] * r;
  }
  return 0.5 * f;
}

Vector DiagonalQuadratic::hvp(const Vector&, const Vector& v) const {
  require_same_size(v.size(), dim(), "DiagonalQuadratic::hvp");
  return d_.cwiseProduct(v);
}

Matrix DiagonalQuadratic::hessian(const Vector&) const { return d_.asDiagonal(); }

Vector DiagonalQuadratic::hessian_diag(const Vector&) const { return d_; }

DenseQuadratic::DenseQuadratic(Matrix a, Vector center) : a_(std::move(a)), c_(std::move(center)) {
  if (a_.rows() != a_.cols()) throw DimensionError("DenseQuadratic: matrix is not square");
  require_same_size(a_.rows(), c_.size(), "DenseQuadratic");
}

double DenseQuadratic::value(const Vector& w) const {
  require_same_size(w.size(), dim(), "DenseQuadratic::value");
  const Vector r = w - c_;
  return 0.5 * r.dot(a_ * r);
}

double DenseQuadratic::value_and_grad(const Vector& w, Vector& g) const {
  require_same_size(w.size(), dim(), "DenseQuadratic::value_and_grad");
  const Vector r = w - c_;
  g.noalias() = a_ * r;
  return 0.5 * r.dot(g);
}

Vector DenseQuadratic::hvp(const Vector&, const Vector& v) const {
  require_same_size(v.size(), dim(), "DenseQuadratic::hvp");
  return a_ * v;
}

RankOneQuadratic::RankOneQuadratic(Vector a, double b) : a_(std::move(a)), b_(b) {}

double RankOneQuadratic::value(const Vector& w) const {
  require_same_size(w.size(), dim(), "RankOneQuadratic::value");
  const double e = a_.dot(w) - b_;
  return 0.5 * e * e;
}

double RankOneQuadratic::value_and_grad(const Vector& w, Vector& g) const {
  require_same_size(w.size(), dim(), "RankOneQuadratic::value_and_grad");
  const double e = a_.dot(w) - b_;
  g = e * a_;
  return 0.5 * e * e;
}

Vector RankOneQuadratic::hvp(const Vector&, const Vector& v) const {
  require_same_size(v.size(), dim(), "RankOneQuadratic::hvp");
  return a_ * a_.dot(v);
}

Matrix RankOneQuadratic::hessian(const Vector&) const { return a_ * a_.transpose(); }

Vector RankOneQuadratic::hessian_diag(const Vector&) const { return a_.array().square(); }

// ---------------------------------------------------------------------------
// MLP

BlockPartition MlpShape::layer_partition() const {
  return BlockPartition::contiguous({hidden * inputs, hidden, classes * hidden, classes});
}

MlpLoss::MlpLoss(MlpShape shape, Matrix x, std::vector<int> labels, double hvp_eps)
    : shape_(shape), x_(std::move(x)), labels_(std::move(labels)), hvp_eps_(hvp_eps) {
  if (x_.cols() != shape_.inputs) throw DimensionError("MlpLoss: input width mismatch");
  require_same_size(x_.rows(), static_cast<Index>(labels_.size()), "MlpLoss labels");
  if (x_.rows() == 0) throw DimensionError("MlpLoss: empty batch");
  for (int y : labels_) {
    if (y < 0 || y >= shape_.classes) throw DimensionError("MlpLoss: label out of range");
  }
}

double MlpLoss::value(const Vector& w) const { return forward_backward(w, nullptr); }

double MlpLoss::value_and_grad(const Vector& w, Vector& g) const {
  g.resize(dim());
  return forward_backward(w, &g);
}

double MlpLoss::forward_backward(const Vector& w, Vector* g) const {
  require_same_size(w.size(), dim(), "MlpLoss");
  const Index ni = shape_.inputs, nh = shape_.hidden, nc = shape_.classes;
  const Index o_b1 = nh * ni, o_w2 = o_b1 + nh, o_b2 = o_w2 + nc * nh;

  Eigen::Map<const RowMajor> w1(w.data(), nh, ni);
  Eigen::Map<const Vector> b1(w.data() + o_b1, nh);
  Eigen::Map<const RowMajor> w2(w.data() + o_w2, nc, nh);
  Eigen::Map<const Vector> b2(w.data() + o_b2, nc);

  if (g != nullptr) g->setZero();
  const double inv_batch = 1.0 / static_cast<double>(x_.rows());
  double loss = 0.0;
  Vector h(nh), logits(nc), p(nc), dh(nh);

  for (Index s = 0; s < x_.rows(); ++s) {
    const auto xs = x_.row(s).transpose();
    h = (w1 * xs + b1).array().tanh();
    logits = w2 * h + b2;
    const double mx = logits.maxCoeff();
    p = (logits.array() - mx).exp();
    const double z = p.sum();
    const int y = labels_[static_cast<std::size_t>(s)];
    loss += (std::log(z) - (logits[y] - mx)) * inv_batch;
    if (g == nullptr) continue;

    p /= z;
    p[y] -= 1.0;
    p *= inv_batch;  // d loss / d logits
    Eigen::Map<RowMajor> gw1(g->data(), nh, ni);
    Eigen::Map<Vector> gb1(g->data() + o_b1, nh);
    Eigen::Map<RowMajor> gw2(g->data() + o_w2, nc, nh);
    Eigen::Map<Vector> gb2(g->data() + o_b2, nc);
    gw2.noalias() += p * h.transpose();
    gb2 += p;
    dh.noalias() = w2.transpose() * p;
    dh.array() *= 1.0 - h.array().square();
    gw1.noalias() += dh * xs.transpose();
    gb1 += dh;
  }
  if (!std::isfinite(loss)) throw NumericError("MlpLoss: non-finite activations", -1);
  return loss;
}

Vector MlpLoss::hvp(const Vector& w, const Vector& v) const {
  require_same_size(v.size(), dim(), "MlpLoss::hvp");
  const double vmax = v.lpNorm<Eigen::Infinity>();
  if (vmax == 0.0) return Vector::Zero(dim());
  const double step = hvp_eps_ * (1.0 + w.lpNorm<Eigen::Infinity>()) / vmax;
  Vector gp, gm;
  value_and_grad(w + step * v, gp);
  value_and_grad(w - step * v, gm);
  return (gp - gm) / (2.0 * step);
}

// ---------------------------------------------------------------------------
// Streams

std::string_view to_string(StreamKind k) {
  switch (k) {
    case StreamKind::noisy_quadratic: return "noisy_quadratic";
    case StreamKind::drifting_quadratic: return "drifting_quadratic";
    case StreamKind::idbd_features: return "idbd_features";
    case StreamKind::mlp_classification: return "mlp_classification";
  }
  return "?";
}

StreamKind stream_kind_from_string(std::string_view s) {
  if (s == "noisy_quadratic") return StreamKind::noisy_quadratic;
  if (s == "drifting_quadratic") return StreamKind::drifting_quadratic;
  if (s == "idbd_features") return StreamKind::idbd_features;
  if (s == "mlp_classification") return StreamKind::mlp_classification;
  throw ConfigError("unknown stream kind '" + std::string(s) + "'");
}

void StreamConfig::validate() const {
  if (dimension < 1) throw ConfigError("stream.dimension must be >= 1");
  if (switch_period < 0) throw ConfigError("stream.switch_period must be >= 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("stream.noise must be >= 0");
  if (!(min_curvature > 0.0 && min_curvature <= 1.0)) {
    throw ConfigError("stream.min_curvature must lie in (0, 1]");
  }
  if (!(target_scale >= 0.0)) throw ConfigError("stream.target_scale must be >= 0");
  if (batch < 1) throw ConfigError("stream.batch must be >= 1");
  if (mlp.inputs < 1 || mlp.hidden < 1 || mlp.classes < 2) {
    throw ConfigError("stream.mlp needs inputs >= 1, hidden >= 1, classes >= 2");
  }
  if (kind == StreamKind::mlp_classification && noise > 1.0) {
    throw ConfigError("stream.noise is a label-flip probability for mlp_classification");
  }
}

bool operator==(const StreamConfig& a, const StreamConfig& b) {
  return a.kind == b.kind && a.dimension == b.dimension && a.noise == b.noise &&
         a.switch_period == b.switch_period && a.seed == b.seed &&
         a.min_curvature == b.min_curvature && a.target_scale == b.target_scale &&
         a.mlp.inputs == b.mlp.inputs && a.mlp.hidden == b.mlp.hidden &&
         a.mlp.classes == b.mlp.classes && a.batch == b.batch;
}

NoisyQuadraticStream::NoisyQuadraticStream(StreamConfig cfg) : LossStream(std::move(cfg)) {
  cfg_.validate();
  const Index n = cfg_.dimension;
  d_.resize(n);
  const double lo = std::log(cfg_.min_curvature);
  for (Index i = 0; i < n; ++i) {
    const double frac = n == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    d_[i] = std::exp(lo * (1.0 - frac));
  }
  SeededRng rng = fixed_rng(cfg_);
  optimum_ = rng.normal_vector(n, cfg_.target_scale);
}

Vector NoisyQuadraticStream::hidden_optimum(long) const { return optimum_; }

std::unique_ptr<LossOracle> NoisyQuadraticStream::next_loss(long t) const {
  if (t < 0) throw DimensionError("next_loss: negative step");
  Vector c = hidden_optimum(t);
  if (cfg_.noise > 0.0) {
    SeededRng rng = step_rng(cfg_, t);
    for (Index i = 0; i < c.size(); ++i) c[i] += cfg_.noise * rng.normal();
  }
  return std::make_unique<DiagonalQuadratic>(d_, std::move(c));
}

DriftingQuadraticStream::DriftingQuadraticStream(StreamConfig cfg)
    : NoisyQuadraticStream(std::move(cfg)) {}

Vector DriftingQuadraticStream::hidden_optimum(long t) const {
  SeededRng rng = segment_rng(cfg_, segment(t));
  return rng.normal_vector(cfg_.dimension, cfg_.target_scale);
}

IdbdFeatureStream::IdbdFeatureStream(StreamConfig cfg) : LossStream(std::move(cfg)) {
  cfg_.validate();
}

Vector IdbdFeatureStream::hidden_target(long t) const {
  SeededRng rng = segment_rng(cfg_, segment(t));
  Vector w(cfg_.dimension);
  for (Index i = 0; i < w.size(); ++i) w[i] = (rng.next_u64() & 1U) ? 1.0 : -1.0;
  return w;
}

std::unique_ptr<LossOracle> IdbdFeatureStream::next_loss(long t) const {
  if (t < 0) throw DimensionError("next_loss: negative step");
  SeededRng rng = step_rng(cfg_, t);
  Vector a = rng.normal_vector(cfg_.dimension);
  const double b = a.dot(hidden_target(t)) + cfg_.noise * rng.normal();
  return std::make_unique<RankOneQuadratic>(std::move(a), b);
}

MlpClassificationStream::MlpClassificationStream(StreamConfig cfg) : LossStream(std::move(cfg)) {
  cfg_.validate();
  cfg_.dimension = cfg_.mlp.parameter_count();
  SeededRng rng = fixed_rng(cfg_).split(1);
  teacher_.resize(cfg_.mlp.classes, cfg_.mlp.inputs);
  for (Index r = 0; r < teacher_.rows(); ++r) {
    for (Index c = 0; c < teacher_.cols(); ++c) teacher_(r, c) = rng.normal();
  }
}

std::vector<int> MlpClassificationStream::permutation(long t) const {
  // Cyclic relabelling by the segment index; consecutive segments always differ.
  const int k = static_cast<int>(cfg_.mlp.classes);
  const int shift = static_cast<int>(segment(t) % k);
  std::vector<int> p(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) p[static_cast<std::size_t>(c)] = (c + shift) % k;
  return p;
}

std::unique_ptr<LossOracle> MlpClassificationStream::next_loss(long t) const {
  if (t < 0) throw DimensionError("next_loss: negative step");
  SeededRng rng = step_rng(cfg_, t);
  const MlpShape& s = cfg_.mlp;
  const std::vector<int> perm = permutation(t);
  Matrix x(cfg_.batch, s.inputs);
  std::vector<int> labels(static_cast<std::size_t>(cfg_.batch));
  Vector scores(s.classes);
  for (Index b = 0; b < cfg_.batch; ++b) {
    for (Index i = 0; i < s.inputs; ++i) x(b, i) = rng.normal();
    scores.noalias() = teacher_ * x.row(b).transpose();
    Index y = 0;
    scores.maxCoeff(&y);
    if (rng.uniform() < cfg_.noise) {
      y = (y + 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(s.classes - 1)))) %
          s.classes;
    }
    labels[static_cast<std::size_t>(b)] = perm[static_cast<std::size_t>(y)];
  }
  return std::make_unique<MlpLoss>(s, std::move(x), std::move(labels));
}

Vector MlpClassificationStream::initial_weights() const {
  const MlpShape& s = cfg_.mlp;
  SeededRng rng = fixed_rng(cfg_).split(2);
  Vector w = Vector::Zero(s.parameter_count());
  const double sc1 = 1.0 / std::sqrt(static_cast<double>(s.inputs));
  const double sc2 = 1.0 / std::sqrt(static_cast<double>(s.hidden));
  for (Index i = 0; i < s.hidden * s.inputs; ++i) w[i] = sc1 * rng.normal();
  const Index o_w2 = s.hidden * s.inputs + s.hidden;
  for (Index i = 0; i < s.classes * s.hidden; ++i) w[o_w2 + i] = sc2 * rng.normal();
  return w;
}

std::unique_ptr<LossStream> make_stream(const StreamConfig& cfg) {
  switch (cfg.kind) {
    case StreamKind::noisy_quadratic: return std::make_unique<NoisyQuadraticStream>(cfg);
    case StreamKind::drifting_quadratic: return std::make_unique<DriftingQuadraticStream>(cfg);
    case StreamKind::idbd_features: return std::make_unique<IdbdFeatureStream>(cfg);
    case StreamKind::mlp_classification: return std::make_unique<MlpClassificationStream>(cfg);
  }
  throw ConfigError("unknown stream kind");
}

}  // namespace metaopt
