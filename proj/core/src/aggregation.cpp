#include "bipoint/aggregation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>
#include <vector>

#include "bipoint/error.hpp"
#include "bipoint/rng.hpp"

namespace bipoint {

std::string_view to_string(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::PlainMax: return "max";
    case AggregationKind::PlainAvg: return "avg";
    case AggregationKind::EmaMax: return "ema-max";
    case AggregationKind::EmaAvg: return "ema-avg";
  }
  return "?";
}

AggregationKind parse_aggregation(std::string_view text) {
  if (text == "max" || text == "plain-max") return AggregationKind::PlainMax;
  if (text == "avg" || text == "plain-avg") return AggregationKind::PlainAvg;
  if (text == "ema-max") return AggregationKind::EmaMax;
  if (text == "ema-avg") return AggregationKind::EmaAvg;
  throw ConfigError("unknown aggregation '" + std::string(text) + "'");
}

EMAConfig EMAConfig::resolve(AggregationKind kind, std::size_t n, DeltaSolver solver, std::size_t mc_samples,
                             std::uint64_t seed) {
  EMAConfig cfg;
  cfg.kind = kind;
  cfg.n = n;
  cfg.mc_samples = mc_samples;
  cfg.seed = seed;
  if (kind == AggregationKind::EmaMax) {
    cfg.delta = solver == DeltaSolver::ClosedForm ? solve_delta_max_cf(n) : solve_delta_max_mc(n, mc_samples, seed);
  }
  return cfg;
}

PoolKind EMAConfig::pool_kind() const {
  return (kind == AggregationKind::PlainMax || kind == AggregationKind::EmaMax) ? PoolKind::Max : PoolKind::Avg;
}

void EMAConfig::validate() const {
  if (kind != AggregationKind::EmaMax && delta != 0.0) {
    throw ConfigError(std::string(to_string(kind)) + " requires delta == 0");
  }
  if (kind == AggregationKind::EmaMax && !(delta >= 0.0)) throw ConfigError("ema-max delta must be non-negative");
  if (n == 0) throw ConfigError("aggregation point count must be positive");
}

// ---------------------------------------------------------------------------

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw DomainError("inverse_normal_cdf: p outside [0, 1]");
  }
  // Acklam's coefficients.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement. In the upper tail the residual is taken on the
  // complementary probability to avoid cancellation.
  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  double e;
  if (p > 0.5) {
    e = -(0.5 * std::erfc(x / std::numbers::sqrt2) - (1.0 - p));
  } else {
    e = normal_cdf(x) - p;
  }
  const double u = e / density;
  return x - u / (1.0 + 0.5 * x * u);
}

double solve_delta_max_cf(std::size_t n) {
  if (n == 0) throw DomainError("solve_delta_max_cf: n must be >= 1");
  if (n == 1) return 0.0;
  // 0.5^(1/n) computed as exp(-ln2/n) keeps precision for large n.
  return inverse_normal_cdf(std::exp(-std::numbers::ln2 / static_cast<double>(n)));
}

double solve_delta_max_mc(std::size_t n, std::size_t mc_samples, std::uint64_t seed) {
  if (n == 0) throw DomainError("solve_delta_max_mc: n must be >= 1");
  if (mc_samples == 0) throw DomainError("solve_delta_max_mc: need at least one simulation");
  Xoshiro256 rng(seed);
  std::vector<double> maxima(mc_samples);
  for (auto& m : maxima) {
    double best = rng.normal();
    for (std::size_t j = 1; j < n; ++j) best = std::max(best, rng.normal());
    m = best;
  }
  const std::size_t mid = mc_samples / 2;
  std::nth_element(maxima.begin(), maxima.begin() + static_cast<std::ptrdiff_t>(mid), maxima.end());
  const double upper = maxima[mid];
  if (mc_samples % 2 == 1) return upper;
  const double lower = *std::max_element(maxima.begin(), maxima.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

// ---------------------------------------------------------------------------

Tensor ema_forward(const Tensor& x, const EMAConfig& cfg) { return ema_forward_groups(x, 1, cfg); }

Tensor ema_forward_groups(const Tensor& x, std::size_t groups, const EMAConfig& cfg) {
  if (!x.defined() || x.numel() == 0) throw EmptyInputError("ema: empty input");
  static std::atomic<bool> warned{false};
  if (cfg.kind == AggregationKind::EmaMax && groups > 0 && x.rows() / groups != cfg.n &&
      !warned.exchange(true)) {
    std::cerr << "warning: ema-max offset was solved for n=" << cfg.n << " but clouds carry "
              << x.rows() / groups << " points; keeping the configured offset\n";
  }
  const Tensor shifted = cfg.delta != 0.0 ? shift(x, -cfg.delta) : x;
  return pool_groups(shifted, groups, cfg.pool_kind());
}

}  // namespace bipoint
