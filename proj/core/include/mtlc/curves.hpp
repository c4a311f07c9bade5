// SPDX-License-Identifier: Apache-2.0
//
// Parametric learning-curve families over per-task sample sizes.
//
// Every family has the saturating form  c - exp(b - <rate terms>)  except
// ILOG2, which is  c - a / log(n).  Raw sample counts are divided by
// ParamSet::n_scale before they enter a curve so exponent arguments stay O(1).
#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtlc {

enum class CurveFamily { kExp4, kExp3_1, kIlog2, kExp3_2, kExp3_3 };

std::string_view family_name(CurveFamily family) noexcept;
/// Accepts the canonical names ("EXP4", "EXP3_1", "ILOG2", "EXP3_2", "EXP3_3");
/// "EXP3" is accepted as an alias of EXP3_1. Throws ConfigError otherwise.
CurveFamily parse_family(std::string_view name);

/// Fixed parameter order used for gradients, freeze masks and serialization.
enum class Param : std::size_t { kAi = 0, kAij, kAsigma, kB, kC, kAlpha };
inline constexpr std::size_t kParamCount = 6;
inline constexpr std::array<Param, kParamCount> kAllParams = {
    Param::kAi, Param::kAij, Param::kAsigma, Param::kB, Param::kC, Param::kAlpha};

std::string_view param_name(Param p) noexcept;

using FreezeMask = std::array<bool, kParamCount>;

struct ParamSet {
  double a_i = 0.0;
  double a_ij = 0.0;
  double a_sigma = 0.0;
  double b = 0.0;
  double c = 0.0;
  double alpha = 1.0;
  FreezeMask frozen{};
  double n_scale = 1.0;

  double get(Param p) const noexcept;
  void set(Param p, double value) noexcept;
  bool is_frozen(Param p) const noexcept { return frozen[static_cast<std::size_t>(p)]; }
  void freeze(Param p, bool on = true) noexcept { frozen[static_cast<std::size_t>(p)] = on; }
};

/// Raw (unscaled) sample counts. n_aux is zero unless the family is EXP3_3.
struct CurveArgs {
  double n_t = 0.0;
  double n_sigma = 0.0;
  double n_aux = 0.0;
};

/// Parameters the family actually uses, in the fixed order.
std::span<const Param> family_params(CurveFamily family) noexcept;
/// family_params minus frozen entries.
std::vector<Param> free_params(CurveFamily family, const ParamSet& params);

/// Number of count arguments the family reads (1, 2 or 3).
int family_arity(CurveFamily family) noexcept;

/// Throws ArityMismatch when args carry counts the family does not take and
/// DomainError for negative/non-finite counts or ILOG2 with scaled n <= 1.
void check_args(CurveFamily family, const ParamSet& params, const CurveArgs& args);

double eval_curve(CurveFamily family, const ParamSet& params, const CurveArgs& args);

/// Partials over the unfrozen family parameters, in the fixed Param order.
std::vector<double> grad_params(CurveFamily family, const ParamSet& params, const CurveArgs& args);

/// Value plus partials over all kParamCount parameters (zero for parameters
/// the family does not use). Skips argument validation; callers check once.
double eval_with_full_grad(CurveFamily family, const ParamSet& params, const CurveArgs& args,
                           std::span<double, kParamCount> grad) noexcept;

enum class GainAxis { kTarget, kSigma, kAux };

/// eval_curve(args + delta along axis) - eval_curve(args). Exact difference.
double marginal_gain(CurveFamily family, const ParamSet& params, const CurveArgs& args,
                     double delta, GainAxis which);

/// CSV serialization: family, a_i, a_ij, a_sigma, b, c, alpha, n_scale, freeze
/// where freeze is a 6-character 0/1 string in the fixed Param order.
inline constexpr std::array<std::string_view, 9> kParamSetColumns = {
    "family", "a_i", "a_ij", "a_sigma", "b", "c", "alpha", "n_scale", "freeze"};

std::vector<std::string> serialize_params(CurveFamily family, const ParamSet& params);
/// Inverse of serialize_params; expects exactly kParamSetColumns.size() fields.
std::pair<CurveFamily, ParamSet> parse_params(std::span<const std::string> fields);

std::string freeze_bits(const FreezeMask& mask);
FreezeMask parse_freeze_bits(std::string_view bits);

}  // namespace mtlc
