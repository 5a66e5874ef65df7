#include "metaopt/optim_base.hpp"
#include "metaopt/optim_meta.hpp"
#include "metaopt/stepsize_map.hpp"

#include <string>

namespace metaopt {

namespace {

[[noreturn]] void unknown(const char* what, std::string_view s) {
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

void require_unit_interval(double x, const char* field) {
  if (!(x >= 0.0 && x < 1.0)) {
    throw ConfigError(std::string(field) + " must lie in [0, 1), got " + std::to_string(x));
  }
}

}  // namespace

std::string_view to_string(MapKind k) {
  return k == MapKind::exponential ? "exponential" : "identity";
}

MapKind map_kind_from_string(std::string_view s) {
  if (s == "exponential") return MapKind::exponential;
  if (s == "identity") return MapKind::identity;
  unknown("step-size map", s);
}

std::string_view to_string(BaseKind k) {
  switch (k) {
    case BaseKind::sgd: return "sgd";
    case BaseKind::sgdm: return "sgdm";
    case BaseKind::rmsprop: return "rmsprop";
    case BaseKind::adamw: return "adamw";
    case BaseKind::lion: return "lion";
  }
  return "?";
}

BaseKind base_kind_from_string(std::string_view s) {
  if (s == "sgd") return BaseKind::sgd;
  if (s == "sgdm") return BaseKind::sgdm;
  if (s == "rmsprop") return BaseKind::rmsprop;
  if (s == "adamw") return BaseKind::adamw;
  if (s == "lion") return BaseKind::lion;
  unknown("base optimizer", s);
}

std::string_view to_string(MomentumTiming t) {
  return t == MomentumTiming::post_update ? "post_update" : "pre_update";
}

MomentumTiming momentum_timing_from_string(std::string_view s) {
  if (s == "post_update") return MomentumTiming::post_update;
  if (s == "pre_update") return MomentumTiming::pre_update;
  unknown("momentum timing", s);
}

BaseConfig BaseConfig::defaults(BaseKind kind) {
  BaseConfig c;
  c.kind = kind;
  switch (kind) {
    case BaseKind::sgd:
      c.kappa = 0.0;
      break;
    case BaseKind::sgdm:
      c.rho = 0.9;
      c.kappa = 0.1;
      break;
    case BaseKind::rmsprop:
      c.lambda = 0.999;
      c.kappa = 0.1;
      break;
    case BaseKind::adamw:
      c.rho = 0.9;
      c.lambda = 0.999;
      c.kappa = 0.1;
      break;
    case BaseKind::lion:
      c.rho = 0.99;
      c.c = 0.9;
      c.kappa = 0.1;
      break;
  }
  return c;
}

void BaseConfig::validate() const {
  require_unit_interval(rho, "base.rho");
  require_unit_interval(lambda, "base.lambda");
  require_unit_interval(c, "base.c");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw ConfigError("base.kappa must be >= 0, got " + std::to_string(kappa));
  }
}

std::string_view to_string(MetaKind k) {
  switch (k) {
    case MetaKind::sgd: return "sgd";
    case MetaKind::adam: return "adam";
    case MetaKind::lion: return "lion";
  }
  return "?";
}

MetaKind meta_kind_from_string(std::string_view s) {
  if (s == "sgd") return MetaKind::sgd;
  if (s == "adam") return MetaKind::adam;
  if (s == "lion") return MetaKind::lion;
  unknown("meta optimizer", s);
}

MetaConfig MetaConfig::defaults(MetaKind kind) {
  MetaConfig c;
  c.kind = kind;
  if (kind == MetaKind::lion) {
    c.rho = 0.99;
    c.c = 0.9;
  }
  return c;
}

void MetaConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ConfigError("meta.eta must be >= 0, got " + std::to_string(eta));
  }
  require_unit_interval(rho, "meta.rho");
  require_unit_interval(lambda, "meta.lambda");
  require_unit_interval(c, "meta.c");
}

}  // namespace metaopt
