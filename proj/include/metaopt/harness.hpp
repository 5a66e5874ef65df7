// Experiment configuration, execution, sweeps and record files.
#pragma once

#include "metaopt/engine.hpp"
#include "metaopt/tasks.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace metaopt {

/// What drives the weights: a trace engine or one of the reference methods.
enum class Method { engine, fixed, idbd, hypergradient };
/// How beta is shared: one value, one per layer of the stream, one per weight.
enum class BlockMode { scalar, layer, weight };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
std::string_view to_string(BlockMode b);
BlockMode block_mode_from_string(std::string_view s);

inline constexpr double kSwitchingGamma = 0.999;

struct ExperimentConfig {
  Method method = Method::engine;
  EngineConfig engine;  ///< engine.map.partition is resolved from `blocks` at execution
  BlockMode blocks = BlockMode::scalar;
  StreamConfig stream;
  long steps = 1000;
  std::uint64_t seed = 0;
  double alpha0 = 1e-3;
  std::vector<double> sweep_alpha0;
  std::vector<double> sweep_eta;
  std::vector<double> sweep_gamma;
  std::string output = "run.csv";
  bool record_timing = false;

  /// Range checks; throws ConfigError naming the field.
  void validate() const;
};

/// Parses and validates. Unknown keys are rejected at every level; parse
/// errors carry line and column, value errors the field path.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
std::string serialize_config(const ExperimentConfig& cfg);

/// Partition for `mode` over the given stream.
BlockPartition resolve_partition(BlockMode mode, const LossStream& stream);

// ---------------------------------------------------------------------------
// Record files

/// CSV with header step,loss,alpha_mean,alpha_block_*,beta_block_*,z_norm,switch,step_micros.
class RecordWriter {
 public:
  RecordWriter(std::ostream& out, int blocks);
  void write(const RunRecord& r);
  void write_abort(long step, std::string_view reason);

 private:
  std::ostream& out_;
  int blocks_;
};

std::string record_header(int blocks);
std::string format_record(const RunRecord& r);

struct RunSummary {
  std::string output;
  long steps_completed = 0;
  bool aborted = false;
  long abort_step = -1;
  std::string abort_reason;
  double final_loss = 0.0;
  double mean_recent_loss = 0.0;  ///< mean over the last min(1000, steps) steps
  double alpha_min = 0.0;         ///< extremes of alpha over the run
  double alpha_max = 0.0;
  double alpha_final = 0.0;       ///< mean alpha at the last step
  std::vector<RunRecord> records;
};

enum ExitCode : int { kExitOk = 0, kExitDivergence = 2, kExitConfig = 3 };

struct ExecuteOptions {
  bool write_file = true;
  bool keep_records = false;
};

/// Runs one configuration, writing records to cfg.output incrementally.
RunSummary execute(const ExperimentConfig& cfg, const ExecuteOptions& opts = {});

struct SweepPoint {
  ExperimentConfig cfg;
  std::size_t index = 0;
};

/// Cartesian grid over sweep_alpha0 x sweep_eta x sweep_gamma (absent lists
/// keep the base value). Each point gets a seed derived from its grid index and
/// an output name embedding its values.
std::vector<SweepPoint> expand_sweep(const ExperimentConfig& cfg);

/// Worker count from METAOPT_WORKERS (absent or invalid: 1).
int sweep_workers_from_env();

/// Executes the grid on `workers` threads; summaries come back in grid order.
std::vector<RunSummary> sweep(const ExperimentConfig& cfg, int workers,
                              const ExecuteOptions& opts = {});

// ---------------------------------------------------------------------------
// Record comparison

struct CompareReport {
  long rows_a = 0;
  long rows_b = 0;
  long rows_compared = 0;
  double max_deviation = 0.0;
  std::string worst_column;
  long first_difference_step = -1;
  bool headers_match = true;
};

/// Column-wise absolute deviation between two record files (step_micros ignored).
CompareReport compare_records(const std::string& path_a, const std::string& path_b);

}  // namespace metaopt
