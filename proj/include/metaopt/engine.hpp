// Trace recursions that couple a base optimizer to a meta optimizer.
#pragma once

#include "metaopt/core.hpp"
#include "metaopt/optim_base.hpp"
#include "metaopt/optim_meta.hpp"
#include "metaopt/stepsize_map.hpp"
#include "metaopt/tasks.hpp"

#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace metaopt {

enum class Variant { exact_full_g, sgd_2x2, l_approx, hessian_free };
enum class UpdateOrder { w_then_beta, beta_then_w };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);
std::string_view to_string(UpdateOrder o);
UpdateOrder update_order_from_string(std::string_view s);

inline constexpr double kTraceLimit = 1e12;

struct EngineConfig {
  Variant variant = Variant::hessian_free;
  double gamma = 1.0;
  BaseConfig base;
  MetaConfig meta;
  StepSizeMap map;
  UpdateOrder order = UpdateOrder::w_then_beta;
  /// l_approx only: replace hvp by the Hessian diagonal times H.
  bool diagonal_hessian = false;
  /// l_approx only: clip (1 - alpha d) at zero in the H update (needs diagonal_hessian).
  bool rectify = false;
  /// Y_0 for the sgd_2x2 and exact recursions (default 1).
  double initial_meta_trace = 1.0;
  double trace_limit = kTraceLimit;

  /// Throws ConfigError for unsupported variant/optimizer combinations.
  void validate() const;
};

/// Hessian-free trace: one n-vector h regardless of the block structure,
/// plus per-step work buffers so stepping does not allocate at size n.
struct HFTrace {
  Vector h;
  Vector alpha;
  Vector grad;
  Vector delta;
  Vector z;

  static HFTrace initial(Index n, int m);
};

/// 2x2 / L trace: H is n x m, Y is m x m.
struct SgdTrace {
  Matrix H;
  Matrix Y;

  static SgdTrace initial(Index n, int m, double y0);
};

/// Exact trace for scalar beta: X = H (n), Q (n), Y scalar.
struct ExactTrace {
  Vector X;
  Vector Q;
  double Y = 1.0;

  static ExactTrace initial(Index n, double y0);
};

using TraceState = std::variant<HFTrace, SgdTrace, ExactTrace>;

struct StepDiagnostics {
  double loss = 0.0;
  Vector alpha_block;  ///< per-block alpha used for the weight update
  Vector beta_block;   ///< beta before the step
  Vector z;            ///< block-grouped surrogate gradient fed to the meta step
};

StepDiagnostics hf_step(const EngineConfig& cfg, BaseState& base, MetaState& meta, HFTrace& trace,
                        const LossOracle& f);
/// Handles both sgd_2x2 and l_approx (Y pinned to identity).
StepDiagnostics sgd2x2_step(const EngineConfig& cfg, BaseState& base, MetaState& meta,
                            SgdTrace& trace, const LossOracle& f);
StepDiagnostics l_approx_step(const EngineConfig& cfg, BaseState& base, MetaState& meta,
                              SgdTrace& trace, const LossOracle& f);
StepDiagnostics exact_step(const EngineConfig& cfg, BaseState& base, MetaState& meta,
                           ExactTrace& trace, const LossOracle& f);

/// One run's full state: base, meta and trace, stepped by the configured variant.
class Engine {
 public:
  Engine(EngineConfig cfg, Vector w0, Vector beta0);

  StepDiagnostics step(const LossOracle& f);

  const EngineConfig& config() const noexcept { return cfg_; }
  const BaseState& base() const noexcept { return base_; }
  const MetaState& meta() const noexcept { return meta_; }
  const TraceState& trace() const noexcept { return trace_; }
  BaseState& base() noexcept { return base_; }
  MetaState& meta() noexcept { return meta_; }
  TraceState& trace() noexcept { return trace_; }
  const Vector& weights() const noexcept { return base_.w; }
  const Vector& beta() const noexcept { return meta_.beta; }
  long steps_taken() const noexcept { return base_.t; }

 private:
  EngineConfig cfg_;
  BaseState base_;
  MetaState meta_;
  TraceState trace_;
};

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
  long step = 0;
  double loss = 0.0;
  double alpha_mean = 0.0;  ///< mean over weights
  double alpha_min = 0.0;
  double alpha_max = 0.0;
  Vector alpha_block;
  Vector beta_block;
  double z_norm = 0.0;
  bool switch_marker = false;
  double step_micros = 0.0;
};

struct RunResult {
  std::vector<RunRecord> records;
  bool aborted = false;
  long abort_step = -1;
  std::string abort_reason;
  Vector final_w;
  Vector final_beta;
};

struct RunOptions {
  bool record_timing = false;
  /// Called after every completed step (for incremental record files).
  std::function<void(const RunRecord&)> on_record;
  /// Keep records in RunResult::records.
  bool keep_records = true;
};

RunRecord make_record(long step, const StepDiagnostics& d, const BlockPartition& p, bool is_switch);

/// Steps the engine through stream losses 0..steps-1. The first NumericError
/// ends the run; records up to that point are retained.
RunResult run(const EngineConfig& cfg, const LossStream& stream, long steps, const Vector& beta0,
              const RunOptions& opts = {});

/// Scalar-beta convenience: beta0 = ln(alpha0) (exponential) or alpha0 (identity),
/// broadcast to every block.
Vector initial_beta(const StepSizeMap& map, double alpha0);

}  // namespace metaopt
