#include "metaopt/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace metaopt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "metaopt_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config gets defaults") {
  const ExperimentConfig c = parse_config(R"({"stream": {"kind": "noisy_quadratic", "dimension": 5}})");
  CHECK(c.method == Method::engine);
  CHECK(c.engine.variant == Variant::hessian_free);
  CHECK(c.engine.meta.eta == 1e-3);
  CHECK(c.engine.gamma == 1.0);
  CHECK(c.engine.base.kind == BaseKind::adamw);
  CHECK(c.engine.base.kappa == 0.1);
  CHECK(c.stream.dimension == 5);
}

TEST_CASE("switching streams default gamma below 1") {
  const ExperimentConfig c = parse_config(R"({"stream": {"kind": "drifting_quadratic", "switch_period": 100}})");
  CHECK(c.engine.gamma == kSwitchingGamma);
  const ExperimentConfig d =
      parse_config(R"({"stream": {"kind": "drifting_quadratic", "switch_period": 100}, "engine": {"gamma": 0.5}})");
  CHECK(d.engine.gamma == 0.5);
}

TEST_CASE("config round trips") {
  const ExperimentConfig a = parse_config(R"({
    "stream": {"kind": "mlp_classification", "batch": 4, "noise": 0.05},
    "engine": {"kind": "hessian_free", "blocks": "layer",
               "base": {"kind": "lion"}, "meta": {"kind": "lion", "eta": 0.002}},
    "steps": 50, "seed": 9, "alpha0": 1e-4, "output": "x.csv",
    "sweep": {"alpha0": [1e-5, 1e-4]}
  })");
  const std::string once = serialize_config(a);
  const ExperimentConfig b = parse_config(once);
  CHECK(serialize_config(b) == once);
  CHECK(b.blocks == BlockMode::layer);
  CHECK(b.engine.base.kind == BaseKind::lion);
  CHECK(b.engine.base.rho == 0.99);
  CHECK(b.engine.meta.eta == 0.002);
  CHECK(b.stream.seed == 9);
  CHECK(b.sweep_alpha0.size() == 2);
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(error_of(R"({"stepz": 10})").find("stepz") != std::string::npos);
  CHECK(error_of(R"({"engine": {"meta": {"etta": 1}}})").find("engine.meta.etta") != std::string::npos);
}

TEST_CASE("parse errors carry line and column") {
  const std::string e = error_of("{\n  \"steps\": 10,\n  oops\n}");
  CHECK(e.find("line 3") != std::string::npos);
  CHECK(e.find("column") != std::string::npos);
}

TEST_CASE("value errors name the field") {
  CHECK(error_of(R"({"engine": {"base": {"rho": 2}}})").find("rho") != std::string::npos);
  CHECK(error_of(R"({"engine": {"kind": "nope"}})").find("engine.kind") != std::string::npos);
  CHECK(error_of(R"({"steps": 0})").find("steps") != std::string::npos);
  CHECK(error_of(R"({"steps": "ten"})").find("steps") != std::string::npos);
}

TEST_CASE("same config and seed give byte-identical records") {
  ExperimentConfig c = parse_config(R"({"stream": {"dimension": 8}, "steps": 200, "seed": 3})");
  c.output = scratch("det_a.csv").string();
  execute(c);
  c.output = scratch("det_b.csv").string();
  execute(c);
  const std::string a = slurp(scratch("det_a.csv"));
  CHECK(a == slurp(scratch("det_b.csv")));
  CHECK(a.rfind("step,loss,alpha_mean,alpha_block_0,beta_block_0,z_norm,switch,step_micros\n", 0) == 0);
  const CompareReport r = compare_records(scratch("det_a.csv").string(), scratch("det_b.csv").string());
  CHECK(r.max_deviation == 0.0);
  CHECK(r.rows_a == 200);
}

TEST_CASE("layer blocks add one column pair per block") {
  ExperimentConfig c = parse_config(R"({"stream": {"kind": "mlp_classification"},
                                        "engine": {"blocks": "layer"}, "steps": 5})");
  c.output = scratch("layers.csv").string();
  execute(c);
  const std::string text = slurp(scratch("layers.csv"));
  CHECK(text.find("alpha_block_3,beta_block_0") != std::string::npos);
}

TEST_CASE("sweep writes one file per grid point") {
  ExperimentConfig c = parse_config(R"({"stream": {"dimension": 4}, "steps": 20,
                                        "sweep": {"alpha0": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2]}})");
  c.output = scratch("sweep.csv").string();
  const auto points = expand_sweep(c);
  REQUIRE(points.size() == 5);
  CHECK(points[0].cfg.seed != points[1].cfg.seed);
  const auto runs = sweep(c, 2);
  REQUIRE(runs.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(runs[i].output == points[i].cfg.output);
    CHECK(fs::exists(runs[i].output));
  }
  CHECK(runs[2].output.find("alpha0=0.0001") != std::string::npos);
}

TEST_CASE("aborted runs keep partial records and an abort row") {
  ExperimentConfig c = parse_config(R"({"stream": {"dimension": 4, "noise": 0},
                                        "engine": {"base": {"kind": "sgd"}, "meta": {"eta": 0}},
                                        "alpha0": 50, "steps": 1000})");
  c.output = scratch("abort.csv").string();
  const RunSummary s = execute(c);
  CHECK(s.aborted);
  CHECK(s.steps_completed == s.abort_step);
  std::ifstream in(c.output);
  std::string line, last;
  long rows = 0;
  while (std::getline(in, line)) {
    last = line;
    ++rows;
  }
  CHECK(last.rfind("abort," + std::to_string(s.abort_step) + ",", 0) == 0);
  CHECK(rows == s.abort_step + 2);
}

TEST_CASE("reference methods share the record schema") {
  for (const char* kind : {"fixed", "hypergradient"}) {
    CAPTURE(kind);
    ExperimentConfig c = parse_config(std::string(R"({"stream": {"dimension": 4}, "steps": 30, "engine": {"kind": ")") +
                                      kind + R"("}})");
    c.output = scratch(std::string(kind) + ".csv").string();
    const RunSummary s = execute(c);
    CHECK(s.steps_completed == 30);
    CHECK(slurp(c.output).rfind(record_header(1), 0) == 0);
  }
  ExperimentConfig c = parse_config(R"({"stream": {"kind": "idbd_features", "dimension": 4}, "steps": 30,
                                        "engine": {"kind": "idbd"}, "alpha0": 0.01})");
  c.output = scratch("idbd.csv").string();
  CHECK(execute(c).steps_completed == 30);
  CHECK_THROWS_AS(parse_config(R"({"engine": {"kind": "idbd"}})"), ConfigError);
}

TEST_CASE("compare finds differences") {
  ExperimentConfig c = parse_config(R"({"stream": {"dimension": 4}, "steps": 40})");
  c.output = scratch("cmp_a.csv").string();
  execute(c);
  c.alpha0 = 2e-3;
  c.output = scratch("cmp_b.csv").string();
  execute(c);
  const CompareReport r = compare_records(scratch("cmp_a.csv").string(), scratch("cmp_b.csv").string());
  CHECK(r.headers_match);
  CHECK(r.max_deviation > 0.0);
  CHECK(r.first_difference_step == 0);
}

TEST_CASE("record formatting keeps full precision") {
  RunRecord r;
  r.step = 3;
  r.loss = 0.1;
  r.alpha_mean = 1.0 / 3.0;
  r.alpha_block = Vector::Constant(1, 1.0 / 3.0);
  r.beta_block = Vector::Constant(1, -1.0986122886681098);
  CHECK(format_record(r) ==
        "3,0.10000000000000001,0.33333333333333331,0.33333333333333331,-1.0986122886681098,0,0,0");
}
