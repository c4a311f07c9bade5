// SPDX-License-Identifier: Apache-2.0
#include "mtlc/curves.hpp"

#include <cmath>
#include <string>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"

namespace mtlc {

namespace {

constexpr std::array<Param, 4> kExp4Params = {Param::kAi, Param::kB, Param::kC, Param::kAlpha};
constexpr std::array<Param, 3> kExp31Params = {Param::kAi, Param::kB, Param::kC};
constexpr std::array<Param, 2> kIlog2Params = {Param::kAi, Param::kC};
constexpr std::array<Param, 4> kExp32Params = {Param::kAi, Param::kAsigma, Param::kB, Param::kC};
constexpr std::array<Param, 5> kExp33Params = {Param::kAi, Param::kAij, Param::kAsigma, Param::kB,
                                               Param::kC};

constexpr std::size_t idx(Param p) { return static_cast<std::size_t>(p); }

}  // namespace

std::string_view family_name(CurveFamily family) noexcept {
  switch (family) {
    case CurveFamily::kExp4: return "EXP4";
    case CurveFamily::kExp3_1: return "EXP3_1";
    case CurveFamily::kIlog2: return "ILOG2";
    case CurveFamily::kExp3_2: return "EXP3_2";
    case CurveFamily::kExp3_3: return "EXP3_3";
  }
  return "?";
}

CurveFamily parse_family(std::string_view name) {
  if (name == "EXP4") return CurveFamily::kExp4;
  if (name == "EXP3_1" || name == "EXP3") return CurveFamily::kExp3_1;
  if (name == "ILOG2") return CurveFamily::kIlog2;
  if (name == "EXP3_2") return CurveFamily::kExp3_2;
  if (name == "EXP3_3") return CurveFamily::kExp3_3;
  throw ConfigError("unknown curve family '" + std::string(name) + "'");
}

std::string_view param_name(Param p) noexcept {
  switch (p) {
    case Param::kAi: return "a_i";
    case Param::kAij: return "a_ij";
    case Param::kAsigma: return "a_sigma";
    case Param::kB: return "b";
    case Param::kC: return "c";
    case Param::kAlpha: return "alpha";
  }
  return "?";
}

double ParamSet::get(Param p) const noexcept {
  switch (p) {
    case Param::kAi: return a_i;
    case Param::kAij: return a_ij;
    case Param::kAsigma: return a_sigma;
    case Param::kB: return b;
    case Param::kC: return c;
    case Param::kAlpha: return alpha;
  }
  return 0.0;
}

void ParamSet::set(Param p, double value) noexcept {
  switch (p) {
    case Param::kAi: a_i = value; break;
    case Param::kAij: a_ij = value; break;
    case Param::kAsigma: a_sigma = value; break;
    case Param::kB: b = value; break;
    case Param::kC: c = value; break;
    case Param::kAlpha: alpha = value; break;
  }
}

std::span<const Param> family_params(CurveFamily family) noexcept {
  switch (family) {
    case CurveFamily::kExp4: return kExp4Params;
    case CurveFamily::kExp3_1: return kExp31Params;
    case CurveFamily::kIlog2: return kIlog2Params;
    case CurveFamily::kExp3_2: return kExp32Params;
    case CurveFamily::kExp3_3: return kExp33Params;
  }
  return {};
}

std::vector<Param> free_params(CurveFamily family, const ParamSet& params) {
  std::vector<Param> out;
  for (Param p : family_params(family)) {
    if (!params.is_frozen(p)) out.push_back(p);
  }
  return out;
}

int family_arity(CurveFamily family) noexcept {
  switch (family) {
    case CurveFamily::kExp3_2: return 2;
    case CurveFamily::kExp3_3: return 3;
    default: return 1;
  }
}

void check_args(CurveFamily family, const ParamSet& params, const CurveArgs& args) {
  for (double v : {args.n_t, args.n_sigma, args.n_aux}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw DomainError("sample counts must be finite and non-negative");
    }
  }
  if (!(params.n_scale > 0.0) || !std::isfinite(params.n_scale)) {
    throw DomainError("n_scale must be positive");
  }
  const int arity = family_arity(family);
  if (arity < 2 && args.n_sigma != 0.0) {
    throw ArityMismatch(std::string(family_name(family)) + " takes no n_sigma argument");
  }
  if (arity < 3 && args.n_aux != 0.0) {
    throw ArityMismatch(std::string(family_name(family)) + " takes no n_aux argument");
  }
  if (family == CurveFamily::kIlog2 && !(args.n_t / params.n_scale > 1.0)) {
    throw DomainError("ILOG2 requires scaled n_t > 1");
  }
}

double eval_with_full_grad(CurveFamily family, const ParamSet& p, const CurveArgs& args,
                           std::span<double, kParamCount> grad) noexcept {
  for (double& g : grad) g = 0.0;
  const double nt = args.n_t / p.n_scale;
  const double ns = args.n_sigma / p.n_scale;
  const double na = args.n_aux / p.n_scale;
  grad[idx(Param::kC)] = 1.0;

  switch (family) {
    case CurveFamily::kIlog2: {
      const double inv_log = 1.0 / std::log(nt);
      grad[idx(Param::kAi)] = -inv_log;
      return p.c - p.a_i * inv_log;
    }
    case CurveFamily::kExp4: {
      const double pw = nt > 0.0 ? std::pow(nt, p.alpha) : 0.0;
      const double e = std::exp(p.b - p.a_i * pw);
      grad[idx(Param::kAi)] = pw * e;
      grad[idx(Param::kB)] = -e;
      grad[idx(Param::kAlpha)] = nt > 0.0 ? p.a_i * pw * std::log(nt) * e : 0.0;
      return p.c - e;
    }
    case CurveFamily::kExp3_1:
    case CurveFamily::kExp3_2:
    case CurveFamily::kExp3_3: {
      double exponent = p.b - p.a_i * nt;
      if (family != CurveFamily::kExp3_1) exponent -= p.a_sigma * ns;
      if (family == CurveFamily::kExp3_3) exponent -= p.a_ij * na;
      const double e = std::exp(exponent);
      grad[idx(Param::kAi)] = nt * e;
      grad[idx(Param::kB)] = -e;
      if (family != CurveFamily::kExp3_1) grad[idx(Param::kAsigma)] = ns * e;
      if (family == CurveFamily::kExp3_3) grad[idx(Param::kAij)] = na * e;
      return p.c - e;
    }
  }
  return 0.0;
}

double eval_curve(CurveFamily family, const ParamSet& params, const CurveArgs& args) {
  check_args(family, params, args);
  std::array<double, kParamCount> grad{};
  return eval_with_full_grad(family, params, args, grad);
}

std::vector<double> grad_params(CurveFamily family, const ParamSet& params, const CurveArgs& args) {
  check_args(family, params, args);
  std::array<double, kParamCount> grad{};
  eval_with_full_grad(family, params, args, grad);
  std::vector<double> out;
  for (Param p : free_params(family, params)) out.push_back(grad[idx(p)]);
  return out;
}

double marginal_gain(CurveFamily family, const ParamSet& params, const CurveArgs& args,
                     double delta, GainAxis which) {
  if (!(delta >= 0.0)) throw DomainError("delta must be non-negative");
  CurveArgs moved = args;
  switch (which) {
    case GainAxis::kTarget: moved.n_t += delta; break;
    case GainAxis::kSigma:
      if (family_arity(family) < 2) {
        throw ArityMismatch(std::string(family_name(family)) + " has no sigma axis");
      }
      moved.n_sigma += delta;
      break;
    case GainAxis::kAux:
      if (family_arity(family) < 3) {
        throw ArityMismatch(std::string(family_name(family)) + " has no aux axis");
      }
      moved.n_aux += delta;
      break;
  }
  const double base = eval_curve(family, params, args);
  if (delta == 0.0) return 0.0;
  return eval_curve(family, params, moved) - base;
}

std::string freeze_bits(const FreezeMask& mask) {
  std::string bits(kParamCount, '0');
  for (std::size_t i = 0; i < kParamCount; ++i) bits[i] = mask[i] ? '1' : '0';
  return bits;
}

FreezeMask parse_freeze_bits(std::string_view bits) {
  if (bits.size() != kParamCount) throw ParseError("freeze mask must have 6 characters");
  FreezeMask mask{};
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (bits[i] != '0' && bits[i] != '1') {
      throw ParseError("freeze mask must be a 0/1 string, got '" + std::string(bits) + "'");
    }
    mask[i] = bits[i] == '1';
  }
  return mask;
}

std::vector<std::string> serialize_params(CurveFamily family, const ParamSet& p) {
  return {std::string(family_name(family)),
          format_double(p.a_i),
          format_double(p.a_ij),
          format_double(p.a_sigma),
          format_double(p.b),
          format_double(p.c),
          format_double(p.alpha),
          format_double(p.n_scale),
          freeze_bits(p.frozen)};
}

std::pair<CurveFamily, ParamSet> parse_params(std::span<const std::string> f) {
  if (f.size() != kParamSetColumns.size()) {
    throw ParseError("parameter record needs " + std::to_string(kParamSetColumns.size()) +
                     " fields");
  }
  ParamSet p;
  const CurveFamily family = parse_family(f[0]);
  p.a_i = parse_double(f[1]);
  p.a_ij = parse_double(f[2]);
  p.a_sigma = parse_double(f[3]);
  p.b = parse_double(f[4]);
  p.c = parse_double(f[5]);
  p.alpha = parse_double(f[6]);
  p.n_scale = parse_double(f[7]);
  p.frozen = parse_freeze_bits(f[8]);
  return {family, p};
}

}  // namespace mtlc
