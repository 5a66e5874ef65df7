// Command-line front end: run, sweep, verify, compare.
#include "metaopt/harness.hpp"
#include "metaopt/verify.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>

using namespace metaopt;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "record file (sweeps: base name)");
  cmd->add_option("--seed", o.seed, "override seed");
  cmd->add_option("--steps", o.steps, "override step count");
}

ExperimentConfig load_with(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.out) cfg.output = *o.out;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.stream.seed = *o.seed;
  }
  if (o.steps) cfg.steps = *o.steps;
  cfg.validate();
  return cfg;
}

void print_summary(const RunSummary& s) {
  fmt::print("{}: steps={} final_loss={:.6g} mean_recent_loss={:.6g} alpha[min={:.3g} max={:.3g} final={:.3g}]{}\n",
             s.output, s.steps_completed, s.final_loss, s.mean_recent_loss, s.alpha_min, s.alpha_max,
             s.alpha_final, s.aborted ? fmt::format(" ABORTED at step {}: {}", s.abort_step, s.abort_reason) : "");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online step-size meta-optimization harness"};
  app.require_subcommand(1);

  Overrides run_o, sweep_o;
  auto* run_cmd = app.add_subcommand("run", "execute one configuration");
  add_overrides(run_cmd, run_o);
  auto* sweep_cmd = app.add_subcommand("sweep", "execute the configured grid (METAOPT_WORKERS threads)");
  add_overrides(sweep_cmd, sweep_o);
  auto* verify_cmd = app.add_subcommand("verify", "run the oracle and equivalence checks");
  std::string path_a, path_b;
  double tolerance = 0.0;
  auto* compare_cmd = app.add_subcommand("compare", "deviation report for two record files");
  compare_cmd->add_option("a", path_a)->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("b", path_b)->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--tolerance", tolerance, "largest accepted absolute deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) {
      const RunSummary s = execute(load_with(run_o));
      print_summary(s);
      return s.aborted ? kExitDivergence : kExitOk;
    }
    if (*sweep_cmd) {
      const ExperimentConfig cfg = load_with(sweep_o);
      bool aborted = false;
      for (const RunSummary& s : sweep(cfg, sweep_workers_from_env())) {
        print_summary(s);
        aborted = aborted || s.aborted;
      }
      return aborted ? kExitDivergence : kExitOk;
    }
    if (*verify_cmd) {
      bool ok = true;
      for (const CheckResult& c : run_standard_checks()) {
        fmt::print("[{}] {}: {:.3g} (limit {:.3g})\n", c.passed ? "PASS" : "FAIL", c.name, c.value, c.limit);
        ok = ok && c.passed;
      }
      return ok ? kExitOk : 1;
    }
    if (*compare_cmd) {
      const CompareReport r = compare_records(path_a, path_b);
      if (!r.headers_match) {
        fmt::print("headers differ\n");
        return 1;
      }
      fmt::print("rows: {} vs {}, compared {}\nmax deviation: {:.17g}{}\nfirst differing step: {}\n", r.rows_a,
                 r.rows_b, r.rows_compared, r.max_deviation,
                 r.worst_column.empty() ? "" : " (" + r.worst_column + ")", r.first_difference_step);
      return (r.rows_a == r.rows_b && r.max_deviation <= tolerance) ? kExitOk : 1;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
