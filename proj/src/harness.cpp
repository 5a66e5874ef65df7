#include "metaopt/harness.hpp"

#include "metaopt/baselines.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace metaopt {

using json = nlohmann::json;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::engine: return "engine";
    case Method::fixed: return "fixed";
    case Method::idbd: return "idbd";
    case Method::hypergradient: return "hypergradient";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  if (s == "engine") return Method::engine;
  if (s == "fixed") return Method::fixed;
  if (s == "idbd") return Method::idbd;
  if (s == "hypergradient") return Method::hypergradient;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

std::string_view to_string(BlockMode b) {
  switch (b) {
    case BlockMode::scalar: return "scalar";
    case BlockMode::layer: return "layer";
    case BlockMode::weight: return "weight";
  }
  return "?";
}

BlockMode block_mode_from_string(std::string_view s) {
  if (s == "scalar") return BlockMode::scalar;
  if (s == "layer") return BlockMode::layer;
  if (s == "weight") return BlockMode::weight;
  throw ConfigError("unknown block mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

// Typed access to one JSON object; remembers which keys were consumed so the
// leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::optional<double> number(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
    return v->get<double>();
  }

  std::optional<long long> integer(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v->get<long long>();
  }

  std::optional<bool> boolean(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    return v->get<bool>();
  }

  std::optional<std::string> string(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
    return v->get<std::string>();
  }

  std::optional<std::vector<double>> numbers(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    if (!v->is_array()) throw ConfigError(field(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw ConfigError(field(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::optional<ObjectReader> object(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    return ObjectReader(*v, field(key));
  }

  /// Rejects keys that were never read.
  void finish() const {
    for (const auto& item : j_.items()) {
      if (seen_.count(item.key()) == 0) {
        throw ConfigError("unknown key '" + field(item.key().c_str()) + "'");
      }
    }
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json* take(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto named(const std::string& field, F&& parse) {
  try {
    return parse();
  } catch (const ConfigError& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

BaseConfig parse_base(ObjectReader r) {
  BaseConfig b = BaseConfig::defaults(BaseKind::adamw);
  if (auto k = r.string("kind")) b = BaseConfig::defaults(named(r.field("kind"), [&] { return base_kind_from_string(*k); }));
  if (auto v = r.number("rho")) b.rho = *v;
  if (auto v = r.number("lambda")) b.lambda = *v;
  if (auto v = r.number("kappa")) b.kappa = *v;
  if (auto v = r.number("c")) b.c = *v;
  if (auto v = r.boolean("bias_correction")) b.bias_correction = *v;
  if (auto v = r.string("momentum_timing")) {
    b.momentum_timing = named(r.field("momentum_timing"), [&] { return momentum_timing_from_string(*v); });
  }
  r.finish();
  return b;
}

MetaConfig parse_meta(ObjectReader r) {
  MetaConfig m = MetaConfig::defaults(MetaKind::adam);
  if (auto k = r.string("kind")) m = MetaConfig::defaults(named(r.field("kind"), [&] { return meta_kind_from_string(*k); }));
  if (auto v = r.number("eta")) m.eta = *v;
  if (auto v = r.number("rho")) m.rho = *v;
  if (auto v = r.number("lambda")) m.lambda = *v;
  if (auto v = r.number("c")) m.c = *v;
  r.finish();
  return m;
}

StreamConfig parse_stream(ObjectReader r) {
  StreamConfig s;
  if (auto k = r.string("kind")) s.kind = named(r.field("kind"), [&] { return stream_kind_from_string(*k); });
  if (auto v = r.integer("dimension")) s.dimension = static_cast<Index>(*v);
  if (auto v = r.number("noise")) s.noise = *v;
  if (auto v = r.integer("switch_period")) s.switch_period = static_cast<long>(*v);
  if (auto v = r.number("min_curvature")) s.min_curvature = *v;
  if (auto v = r.number("target_scale")) s.target_scale = *v;
  if (auto v = r.integer("batch")) s.batch = static_cast<Index>(*v);
  if (auto mr = r.object("mlp")) {
    if (auto v = mr->integer("inputs")) s.mlp.inputs = static_cast<Index>(*v);
    if (auto v = mr->integer("hidden")) s.mlp.hidden = static_cast<Index>(*v);
    if (auto v = mr->integer("classes")) s.mlp.classes = static_cast<Index>(*v);
    mr->finish();
  }
  r.finish();
  return s;
}

void parse_engine(ObjectReader r, ExperimentConfig& cfg, bool switching) {
  EngineConfig& e = cfg.engine;
  if (auto k = r.string("kind")) {
    const std::string kind = *k;
    if (kind == "fixed" || kind == "idbd" || kind == "hypergradient") {
      cfg.method = method_from_string(kind);
    } else {
      cfg.method = Method::engine;
      e.variant = named(r.field("kind"), [&] { return variant_from_string(kind); });
    }
  }
  e.gamma = switching ? kSwitchingGamma : 1.0;
  if (auto v = r.number("gamma")) e.gamma = *v;
  if (auto v = r.string("order")) e.order = named(r.field("order"), [&] { return update_order_from_string(*v); });
  if (auto v = r.string("map")) e.map.kind = named(r.field("map"), [&] { return map_kind_from_string(*v); });
  if (auto v = r.string("blocks")) cfg.blocks = named(r.field("blocks"), [&] { return block_mode_from_string(*v); });
  if (auto v = r.boolean("diagonal_hessian")) e.diagonal_hessian = *v;
  if (auto v = r.boolean("rectify")) e.rectify = *v;
  if (auto v = r.number("initial_meta_trace")) e.initial_meta_trace = *v;
  if (auto v = r.number("trace_limit")) e.trace_limit = *v;
  e.base = BaseConfig::defaults(BaseKind::adamw);
  e.meta = MetaConfig::defaults(MetaKind::adam);
  if (auto b = r.object("base")) e.base = parse_base(*b);
  if (auto m = r.object("meta")) e.meta = parse_meta(*m);
  r.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  stream.validate();
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(alpha0 > 0.0) && !(method == Method::hypergradient || engine.map.kind == MapKind::identity)) {
    throw ConfigError("alpha0 must be > 0");
  }
  if (!std::isfinite(alpha0)) throw ConfigError("alpha0 must be finite");
  for (double a : sweep_alpha0) {
    if (!(a > 0.0)) throw ConfigError("sweep.alpha0 entries must be > 0");
  }
  for (double v : sweep_eta) {
    if (!(v >= 0.0)) throw ConfigError("sweep.eta entries must be >= 0");
  }
  for (double g : sweep_gamma) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("sweep.gamma entries must lie in [0, 1]");
  }
  if (output.empty()) throw ConfigError("output must be a non-empty path");
  named("engine", [&] {
    engine.base.validate();
    engine.meta.validate();
    if (!(engine.gamma >= 0.0 && engine.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    return 0;
  });
  if (method == Method::idbd && stream.kind != StreamKind::idbd_features) {
    throw ConfigError("engine.kind: idbd needs the idbd_features stream");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // nlohmann's message already names line and column.
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ObjectReader root(j, "");
  ExperimentConfig cfg;
  if (auto s = root.object("stream")) cfg.stream = parse_stream(*s);
  const bool switching = cfg.stream.switch_period > 0;
  cfg.engine.gamma = switching ? kSwitchingGamma : 1.0;
  cfg.engine.base = BaseConfig::defaults(BaseKind::adamw);
  cfg.engine.meta = MetaConfig::defaults(MetaKind::adam);
  if (auto e = root.object("engine")) parse_engine(*e, cfg, switching);
  if (auto v = root.integer("steps")) cfg.steps = static_cast<long>(*v);
  if (auto v = root.integer("seed")) {
    if (*v < 0) throw ConfigError("seed must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(*v);
  }
  if (auto v = root.number("alpha0")) cfg.alpha0 = *v;
  if (auto v = root.string("output")) cfg.output = *v;
  if (auto v = root.boolean("record_timing")) cfg.record_timing = *v;
  if (auto sw = root.object("sweep")) {
    if (auto v = sw->numbers("alpha0")) cfg.sweep_alpha0 = *v;
    if (auto v = sw->numbers("eta")) cfg.sweep_eta = *v;
    if (auto v = sw->numbers("gamma")) cfg.sweep_gamma = *v;
    if ((sw->has("alpha0") && cfg.sweep_alpha0.empty()) || (sw->has("eta") && cfg.sweep_eta.empty()) ||
        (sw->has("gamma") && cfg.sweep_gamma.empty())) {
      throw ConfigError("sweep: value lists must be non-empty");
    }
    sw->finish();
  }
  root.finish();
  cfg.stream.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  using oj = nlohmann::ordered_json;
  const EngineConfig& e = cfg.engine;
  oj base = {{"kind", std::string(to_string(e.base.kind))},
             {"rho", e.base.rho},
             {"lambda", e.base.lambda},
             {"kappa", e.base.kappa},
             {"c", e.base.c},
             {"bias_correction", e.base.bias_correction},
             {"momentum_timing", std::string(to_string(e.base.momentum_timing))}};
  oj meta = {{"kind", std::string(to_string(e.meta.kind))},
             {"eta", e.meta.eta},
             {"rho", e.meta.rho},
             {"lambda", e.meta.lambda},
             {"c", e.meta.c}};
  const std::string kind = cfg.method == Method::engine ? std::string(to_string(e.variant))
                                                        : std::string(to_string(cfg.method));
  oj engine = {{"kind", kind},
               {"gamma", e.gamma},
               {"order", std::string(to_string(e.order))},
               {"map", std::string(to_string(e.map.kind))},
               {"blocks", std::string(to_string(cfg.blocks))},
               {"diagonal_hessian", e.diagonal_hessian},
               {"rectify", e.rectify},
               {"initial_meta_trace", e.initial_meta_trace},
               {"trace_limit", e.trace_limit},
               {"base", base},
               {"meta", meta}};
  const StreamConfig& s = cfg.stream;
  oj stream = {{"kind", std::string(to_string(s.kind))},
               {"dimension", s.dimension},
               {"noise", s.noise},
               {"switch_period", s.switch_period},
               {"min_curvature", s.min_curvature},
               {"target_scale", s.target_scale},
               {"batch", s.batch},
               {"mlp", {{"inputs", s.mlp.inputs}, {"hidden", s.mlp.hidden}, {"classes", s.mlp.classes}}}};
  oj out = {{"engine", engine},
            {"stream", stream},
            {"steps", cfg.steps},
            {"seed", cfg.seed},
            {"alpha0", cfg.alpha0},
            {"output", cfg.output},
            {"record_timing", cfg.record_timing}};
  oj sweep = oj::object();
  if (!cfg.sweep_alpha0.empty()) sweep["alpha0"] = cfg.sweep_alpha0;
  if (!cfg.sweep_eta.empty()) sweep["eta"] = cfg.sweep_eta;
  if (!cfg.sweep_gamma.empty()) sweep["gamma"] = cfg.sweep_gamma;
  if (!sweep.empty()) out["sweep"] = sweep;
  return out;
}

std::string serialize_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

BlockPartition resolve_partition(BlockMode mode, const LossStream& stream) {
  switch (mode) {
    case BlockMode::scalar: return BlockPartition::scalar(stream.dimension());
    case BlockMode::layer: return stream.layer_partition();
    case BlockMode::weight: return BlockPartition::identity(stream.dimension());
  }
  throw ConfigError("unknown block mode");
}

// ---------------------------------------------------------------------------
// Records

std::string record_header(int blocks) {
  std::string h = "step,loss,alpha_mean";
  for (int j = 0; j < blocks; ++j) h += fmt::format(",alpha_block_{}", j);
  for (int j = 0; j < blocks; ++j) h += fmt::format(",beta_block_{}", j);
  h += ",z_norm,switch,step_micros";
  return h;
}

std::string format_record(const RunRecord& r) {
  std::string s = fmt::format("{},{:.17g},{:.17g}", r.step, r.loss, r.alpha_mean);
  for (Index j = 0; j < r.alpha_block.size(); ++j) s += fmt::format(",{:.17g}", r.alpha_block[j]);
  for (Index j = 0; j < r.beta_block.size(); ++j) s += fmt::format(",{:.17g}", r.beta_block[j]);
  s += fmt::format(",{:.17g},{},{:.17g}", r.z_norm, r.switch_marker ? 1 : 0, r.step_micros);
  return s;
}

RecordWriter::RecordWriter(std::ostream& out, int blocks) : out_(out), blocks_(blocks) {
  out_ << record_header(blocks_) << '\n';
}

void RecordWriter::write(const RunRecord& r) {
  require_same_size(r.alpha_block.size(), blocks_, "RecordWriter alpha blocks");
  out_ << format_record(r) << '\n';
}

void RecordWriter::write_abort(long step, std::string_view reason) {
  std::string clean(reason);
  std::replace_if(clean.begin(), clean.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, ';');
  out_ << "abort," << step << ',' << clean << '\n';
  out_.flush();
}

// ---------------------------------------------------------------------------
// Execution

namespace {

// Incremental summary statistics.
class SummaryBuilder {
 public:
  SummaryBuilder(long steps, bool keep) : window_(static_cast<std::size_t>(std::min<long>(steps, 1000))), keep_(keep) {}

  void add(const RunRecord& r) {
    if (count_ == 0) {
      s_.alpha_min = r.alpha_min;
      s_.alpha_max = r.alpha_max;
    }
    s_.alpha_min = std::min(s_.alpha_min, r.alpha_min);
    s_.alpha_max = std::max(s_.alpha_max, r.alpha_max);
    s_.final_loss = r.loss;
    s_.alpha_final = r.alpha_mean;
    window_[static_cast<std::size_t>(count_) % window_.size()] = r.loss;
    ++count_;
    if (keep_) s_.records.push_back(r);
  }

  RunSummary finish(const RunResult& res, std::string output) {
    s_.output = std::move(output);
    s_.steps_completed = count_;
    s_.aborted = res.aborted;
    s_.abort_step = res.abort_step;
    s_.abort_reason = res.abort_reason;
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(count_), window_.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += window_[i];
    s_.mean_recent_loss = k > 0 ? sum / static_cast<double>(k) : 0.0;
    return std::move(s_);
  }

 private:
  std::vector<double> window_;
  long count_ = 0;
  bool keep_;
  RunSummary s_;
};

// Shared stepping loop for the reference methods that have no Engine.
template <typename StepFn>
RunResult loop_records(const LossStream& stream, long steps, const BlockPartition& p,
                       const RunOptions& opts, StepFn&& step) {
  RunResult out;
  for (long t = 0; t < steps; ++t) {
    try {
      const auto f = stream.next_loss(t);
      const auto t0 = std::chrono::steady_clock::now();
      StepDiagnostics d = step(*f);
      const auto t1 = std::chrono::steady_clock::now();
      RunRecord r = make_record(t, d, p, stream.is_switch(t));
      if (opts.record_timing) r.step_micros = std::chrono::duration<double, std::micro>(t1 - t0).count();
      if (opts.on_record) opts.on_record(r);
      if (opts.keep_records) out.records.push_back(std::move(r));
    } catch (const NumericError& e) {
      out.aborted = true;
      out.abort_step = t;
      out.abort_reason = e.what();
      break;
    }
  }
  return out;
}

RunResult dispatch(const ExperimentConfig& cfg, const LossStream& stream, const RunOptions& opts,
                   int& blocks) {
  switch (cfg.method) {
    case Method::engine: {
      EngineConfig ec = cfg.engine;
      ec.map.partition = resolve_partition(cfg.blocks, stream);
      blocks = ec.map.beta_dim();
      return run(ec, stream, cfg.steps, initial_beta(ec.map, cfg.alpha0), opts);
    }
    case Method::fixed:
      blocks = 1;
      return fixed_step_run(cfg.engine.base, cfg.alpha0, stream, cfg.steps, opts);
    case Method::idbd: {
      const Index n = stream.dimension();
      const BlockPartition p = BlockPartition::identity(n);
      blocks = p.block_count();
      IdbdState s = IdbdState::initial(stream.initial_weights(), Vector::Constant(n, std::log(cfg.alpha0)),
                                       cfg.engine.meta.eta);
      RunResult r = loop_records(stream, cfg.steps, p, opts, [&](const LossOracle& f) {
        const auto* q = dynamic_cast<const RankOneQuadratic*>(&f);
        if (q == nullptr) throw CapabilityError("idbd needs the idbd_features stream");
        StepDiagnostics d;
        d.loss = f.value(s.w);
        d.beta_block = s.beta;
        const Vector g = f.grad(s.w);
        d.z = s.h.cwiseProduct(g);
        idbd_step(s, q->features(), q->target());
        d.alpha_block = s.beta.array().exp();
        if (!s.w.allFinite() || !s.beta.allFinite()) throw NumericError("idbd: non-finite state", -1);
        return d;
      });
      r.final_w = s.w;
      r.final_beta = s.beta;
      return r;
    }
    case Method::hypergradient: {
      const BlockPartition p = BlockPartition::scalar(stream.dimension());
      blocks = 1;
      HypergradientState s = HypergradientState::initial(stream.initial_weights(), cfg.alpha0, cfg.engine.meta.eta);
      RunResult r = loop_records(stream, cfg.steps, p, opts, [&](const LossOracle& f) {
        StepDiagnostics d;
        d.beta_block = Vector::Constant(1, s.beta);
        d.alpha_block = d.beta_block;
        d.z = Vector::Constant(1, s.H.dot(f.grad(s.base.w)));
        d.loss = hypergradient_step(s, f, cfg.engine.base);
        return d;
      });
      r.final_w = s.base.w;
      r.final_beta = Vector::Constant(1, s.beta);
      return r;
    }
  }
  throw ConfigError("unknown method");
}

}  // namespace

RunSummary execute(const ExperimentConfig& cfg, const ExecuteOptions& xo) {
  cfg.validate();
  StreamConfig sc = cfg.stream;
  sc.seed = cfg.seed;
  const auto stream = make_stream(sc);

  std::ofstream file;
  std::unique_ptr<RecordWriter> writer;
  int blocks = 0;
  SummaryBuilder summary(cfg.steps, xo.keep_records);

  RunOptions opts;
  opts.record_timing = cfg.record_timing;
  opts.keep_records = false;
  opts.on_record = [&](const RunRecord& r) {
    if (xo.write_file) {
      if (!writer) {
        file.open(cfg.output, std::ios::out | std::ios::trunc);
        if (!file) throw ConfigError("cannot open output '" + cfg.output + "'");
        writer = std::make_unique<RecordWriter>(file, static_cast<int>(r.alpha_block.size()));
      }
      writer->write(r);
    }
    summary.add(r);
  };

  const RunResult res = dispatch(cfg, *stream, opts, blocks);
  if (xo.write_file) {
    if (!writer) {
      file.open(cfg.output, std::ios::out | std::ios::trunc);
      if (!file) throw ConfigError("cannot open output '" + cfg.output + "'");
      writer = std::make_unique<RecordWriter>(file, blocks);
    }
    if (res.aborted) {
      writer->write_abort(res.abort_step, res.abort_reason);
      spdlog::warn("run aborted at step {}: {}", res.abort_step, res.abort_reason);
    }
    file.flush();
  }
  return summary.finish(res, cfg.output);
}

namespace {

std::string point_output(const std::string& base, double alpha0, double eta, double gamma) {
  std::string stem = base, ext;
  const auto dot = base.find_last_of('.');
  const auto slash = base.find_last_of('/');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) {
    stem = base.substr(0, dot);
    ext = base.substr(dot);
  } else {
    ext = ".csv";
  }
  return fmt::format("{}_alpha0={:g}_eta={:g}_gamma={:g}{}", stem, alpha0, eta, gamma, ext);
}

}  // namespace

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& cfg) {
  const std::vector<double> alphas = cfg.sweep_alpha0.empty() ? std::vector<double>{cfg.alpha0} : cfg.sweep_alpha0;
  const std::vector<double> etas = cfg.sweep_eta.empty() ? std::vector<double>{cfg.engine.meta.eta} : cfg.sweep_eta;
  const std::vector<double> gammas = cfg.sweep_gamma.empty() ? std::vector<double>{cfg.engine.gamma} : cfg.sweep_gamma;
  std::vector<SweepPoint> grid;
  for (double a : alphas) {
    for (double e : etas) {
      for (double g : gammas) {
        SweepPoint p;
        p.index = grid.size();
        p.cfg = cfg;
        p.cfg.sweep_alpha0.clear();
        p.cfg.sweep_eta.clear();
        p.cfg.sweep_gamma.clear();
        p.cfg.alpha0 = a;
        p.cfg.engine.meta.eta = e;
        p.cfg.engine.gamma = g;
        p.cfg.seed = derive_seed(cfg.seed, p.index);
        p.cfg.stream.seed = p.cfg.seed;
        p.cfg.output = point_output(cfg.output, a, e, g);
        grid.push_back(std::move(p));
      }
    }
  }
  return grid;
}

int sweep_workers_from_env() {
  const char* v = std::getenv("METAOPT_WORKERS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) {
    spdlog::warn("ignoring METAOPT_WORKERS='{}' (expected a positive integer)", v);
    return 1;
  }
  return static_cast<int>(std::min<long>(n, 256));
}

std::vector<RunSummary> sweep(const ExperimentConfig& cfg, int workers, const ExecuteOptions& opts) {
  const std::vector<SweepPoint> grid = expand_sweep(cfg);
  std::vector<RunSummary> out(grid.size());
  std::vector<std::exception_ptr> errors(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        out[i] = execute(grid[i].cfg, opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(grid.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

struct RecordTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

RecordTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open record file '" + path + "'");
  RecordTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("record file '" + path + "' is empty");
  t.header = split_csv(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv(line));
  }
  return t;
}

}  // namespace

CompareReport compare_records(const std::string& path_a, const std::string& path_b) {
  const RecordTable a = read_table(path_a);
  const RecordTable b = read_table(path_b);
  CompareReport rep;
  rep.rows_a = static_cast<long>(a.rows.size());
  rep.rows_b = static_cast<long>(b.rows.size());
  rep.headers_match = a.header == b.header;
  if (!rep.headers_match) return rep;
  const std::size_t rows = std::min(a.rows.size(), b.rows.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& ra = a.rows[r];
    const auto& rb = b.rows[r];
    if (ra.empty() || rb.empty()) continue;
    if (ra[0] == "abort" || rb[0] == "abort") {
      if (ra != rb && rep.first_difference_step < 0) rep.first_difference_step = static_cast<long>(r);
      continue;
    }
    ++rep.rows_compared;
    for (std::size_t c = 0; c < a.header.size() && c < ra.size() && c < rb.size(); ++c) {
      if (a.header[c] == "step_micros") continue;
      const double va = std::strtod(ra[c].c_str(), nullptr);
      const double vb = std::strtod(rb[c].c_str(), nullptr);
      const double dev = std::abs(va - vb);
      if (dev > rep.max_deviation || (std::isnan(dev) && !std::isnan(rep.max_deviation))) {
        rep.max_deviation = std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev;
        rep.worst_column = a.header[c];
      }
      if (dev != 0.0 && rep.first_difference_step < 0) {
        rep.first_difference_step = std::strtol(ra[0].c_str(), nullptr, 10);
      }
    }
  }
  if (rep.rows_a != rep.rows_b && rep.first_difference_step < 0) rep.first_difference_step = static_cast<long>(rows);
  return rep;
}

}  // namespace metaopt
