// Loss oracles f_t and the streams that produce them.
#pragma once

#include "metaopt/core.hpp"

#include <cstdint>
#include <memory>
#include <string_view>

namespace metaopt {

/// One timestep's loss. value/grad are mandatory; Hessian access is optional
/// and advertised through the has_* queries.
class LossOracle {
 public:
  virtual ~LossOracle() = default;

  virtual Index dim() const = 0;
  virtual double value(const Vector& w) const = 0;
  /// Writes the gradient into g (resized if needed) and returns the value.
  virtual double value_and_grad(const Vector& w, Vector& g) const = 0;
  Vector grad(const Vector& w) const {
    Vector g;
    value_and_grad(w, g);
    return g;
  }

  virtual bool has_hvp() const { return false; }
  virtual Vector hvp(const Vector& w, const Vector& v) const;
  virtual bool has_hessian() const { return false; }
  virtual Matrix hessian(const Vector& w) const;
  virtual bool has_hessian_diag() const { return false; }
  virtual Vector hessian_diag(const Vector& w) const;

  /// Constant Hessian in w (third derivative identically zero).
  virtual bool is_quadratic() const { return false; }
};

/// f(w) = 1/2 sum_i d_i (w_i - c_i)^2
class DiagonalQuadratic final : public LossOracle {
 public:
  DiagonalQuadratic(Vector curvature, Vector center);

  Index dim() const override { return d_.size(); }
  double value(const Vector& w) const override;
  double value_and_grad(const Vector& w, Vector& g) const override;
  bool has_hvp() const override { return true; }
  Vector hvp(const Vector& w, const Vector& v) const override;
  bool has_hessian() const override { return true; }
  Matrix hessian(const Vector& w) const override;
  bool has_hessian_diag() const override { return true; }
  Vector hessian_diag(const Vector& w) const override;
  bool is_quadratic() const override { return true; }

  const Vector& curvature() const noexcept { return d_; }
  const Vector& center() const noexcept { return c_; }

 private:
  Vector d_;
  Vector c_;
};

/// f(w) = 1/2 (w - c)^T A (w - c), A symmetric.
class DenseQuadratic final : public LossOracle {
 public:
  DenseQuadratic(Matrix a, Vector center);

  Index dim() const override { return c_.size(); }
  double value(const Vector& w) const override;
  double value_and_grad(const Vector& w, Vector& g) const override;
  bool has_hvp() const override { return true; }
  Vector hvp(const Vector& w, const Vector& v) const override;
  bool has_hessian() const override { return true; }
  Matrix hessian(const Vector&) const override { return a_; }
  bool has_hessian_diag() const override { return true; }
  Vector hessian_diag(const Vector&) const override { return a_.diagonal(); }
  bool is_quadratic() const override { return true; }

 private:
  Matrix a_;
  Vector c_;
};

/// f(w) = 1/2 (a . w - b)^2, the linear-regression sample loss.
class RankOneQuadratic final : public LossOracle {
 public:
  RankOneQuadratic(Vector a, double b);

  Index dim() const override { return a_.size(); }
  double value(const Vector& w) const override;
  double value_and_grad(const Vector& w, Vector& g) const override;
  bool has_hvp() const override { return true; }
  Vector hvp(const Vector& w, const Vector& v) const override;
  bool has_hessian() const override { return true; }
  Matrix hessian(const Vector& w) const override;
  bool has_hessian_diag() const override { return true; }
  Vector hessian_diag(const Vector& w) const override;
  bool is_quadratic() const override { return true; }

  const Vector& features() const noexcept { return a_; }
  double target() const noexcept { return b_; }

 private:
  Vector a_;
  double b_;
};

/// Shape of the two-layer tanh network with softmax cross-entropy.
struct MlpShape {
  Index inputs = 8;
  Index hidden = 16;
  Index classes = 2;

  Index parameter_count() const { return hidden * inputs + hidden + classes * hidden + classes; }
  /// Four blocks: W1, b1, W2, b2.
  BlockPartition layer_partition() const;
};

/// Mean cross-entropy over a minibatch. Parameters are packed as W1 (row
/// major, hidden x inputs), b1, W2 (classes x hidden), b2.
class MlpLoss final : public LossOracle {
 public:
  /// x: batch x inputs, labels in [0, classes).
  MlpLoss(MlpShape shape, Matrix x, std::vector<int> labels, double hvp_eps = 1e-5);

  Index dim() const override { return shape_.parameter_count(); }
  double value(const Vector& w) const override;
  double value_and_grad(const Vector& w, Vector& g) const override;
  /// Central difference of the gradient.
  bool has_hvp() const override { return true; }
  Vector hvp(const Vector& w, const Vector& v) const override;

 private:
  double forward_backward(const Vector& w, Vector* g) const;

  MlpShape shape_;
  Matrix x_;
  std::vector<int> labels_;
  double hvp_eps_;
};

// ---------------------------------------------------------------------------
// Streams

enum class StreamKind { noisy_quadratic, drifting_quadratic, idbd_features, mlp_classification };

std::string_view to_string(StreamKind k);
StreamKind stream_kind_from_string(std::string_view s);

struct StreamConfig {
  StreamKind kind = StreamKind::noisy_quadratic;
  Index dimension = 10;      ///< ignored by the MLP stream (set by its shape)
  double noise = 1.0;        ///< observation noise (label-flip probability for the MLP)
  long switch_period = 0;    ///< 0 = stationary
  std::uint64_t seed = 0;
  double min_curvature = 0.01;  ///< quadratic curvatures log-spaced in [min, 1]
  double target_scale = 1.0;    ///< spread of the hidden optimum
  MlpShape mlp;
  Index batch = 1;

  void validate() const;
  friend bool operator==(const StreamConfig& a, const StreamConfig& b);
};

/// A deterministic sequence of losses: next_loss(t) depends only on the
/// config and t, so perturbed replays see identical f_t (common random numbers).
class LossStream {
 public:
  explicit LossStream(StreamConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~LossStream() = default;

  const StreamConfig& config() const noexcept { return cfg_; }
  virtual Index dimension() const { return cfg_.dimension; }
  virtual std::unique_ptr<LossOracle> next_loss(long t) const = 0;
  virtual Vector initial_weights() const { return Vector::Zero(dimension()); }
  /// Natural grouping of the weights into blocks (layers for the MLP).
  virtual BlockPartition layer_partition() const { return BlockPartition::scalar(dimension()); }
  /// Index of the hidden task active at step t.
  long segment(long t) const { return cfg_.switch_period > 0 ? t / cfg_.switch_period : 0; }
  bool is_switch(long t) const { return cfg_.switch_period > 0 && t > 0 && t % cfg_.switch_period == 0; }
  virtual bool replayable() const { return true; }

 protected:
  StreamConfig cfg_;
};

/// f_t = 1/2 sum_i d_i (w_i - w*_i - xi_{t,i})^2; w* fixed, xi ~ N(0, noise^2).
class NoisyQuadraticStream : public LossStream {
 public:
  explicit NoisyQuadraticStream(StreamConfig cfg);
  std::unique_ptr<LossOracle> next_loss(long t) const override;
  /// Hidden optimum of the segment containing t.
  virtual Vector hidden_optimum(long t) const;
  const Vector& curvature() const noexcept { return d_; }

 protected:
  Vector d_;
  Vector optimum_;
};

/// As NoisyQuadraticStream, with the optimum redrawn every switch_period steps.
class DriftingQuadraticStream final : public NoisyQuadraticStream {
 public:
  explicit DriftingQuadraticStream(StreamConfig cfg);
  Vector hidden_optimum(long t) const override;
};

/// f_t = 1/2 (a_t . w - b_t)^2, a_t ~ N(0, I), b_t = a_t . w_target + noise;
/// w_target has +-1 entries, redrawn every switch_period steps.
class IdbdFeatureStream final : public LossStream {
 public:
  explicit IdbdFeatureStream(StreamConfig cfg);
  std::unique_ptr<LossOracle> next_loss(long t) const override;
  Vector hidden_target(long t) const;
};

/// Teacher-labelled two-layer MLP classification. Each segment applies a
/// different label permutation.
class MlpClassificationStream final : public LossStream {
 public:
  explicit MlpClassificationStream(StreamConfig cfg);
  Index dimension() const override { return cfg_.mlp.parameter_count(); }
  std::unique_ptr<LossOracle> next_loss(long t) const override;
  Vector initial_weights() const override;
  BlockPartition layer_partition() const override { return cfg_.mlp.layer_partition(); }
  /// Label permutation active in the segment containing t.
  std::vector<int> permutation(long t) const;

 private:
  Matrix teacher_;
};

std::unique_ptr<LossStream> make_stream(const StreamConfig& cfg);

}  // namespace metaopt
