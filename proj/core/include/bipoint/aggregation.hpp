#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "bipoint/tensor.hpp"

namespace bipoint {

// Entropy-maximizing aggregation: a constant offset tau(x) = x - delta applied
// before max or mean pooling so that the sign of the pooled feature is +1 for
// half of the inputs when the pre-pooling feature is standard normal.

enum class AggregationKind { PlainMax, PlainAvg, EmaMax, EmaAvg };

std::string_view to_string(AggregationKind kind);
AggregationKind parse_aggregation(std::string_view text);

enum class DeltaSolver { ClosedForm, MonteCarlo };

struct EMAConfig {
  AggregationKind kind = AggregationKind::EmaMax;
  std::size_t n = 1024;  // expected point count
  double delta = 0.0;
  std::size_t mc_samples = 100000;
  std::uint64_t seed = 0;

  /// Builds a config with delta resolved for `n` (ema-max only; zero otherwise).
  static EMAConfig resolve(AggregationKind kind, std::size_t n, DeltaSolver solver = DeltaSolver::ClosedForm,
                           std::size_t mc_samples = 100000, std::uint64_t seed = 0);

  PoolKind pool_kind() const;
  /// Throws ConfigError when delta is inconsistent with the kind.
  void validate() const;
};

/// Inverse of the standard normal CDF. Rational approximation (Acklam) refined
/// with one Halley step against erfc; accurate to well below 1e-8 on (0, 1).
double inverse_normal_cdf(double p);
double normal_cdf(double x);

/// Monte Carlo estimate of the entropy-maximizing offset for max pooling over
/// n standard-normal values: the median of `mc_samples` simulated maxima.
double solve_delta_max_mc(std::size_t n, std::size_t mc_samples, std::uint64_t seed);

/// Closed form of the same quantity: the offset at which P(max >= delta) = 1/2,
/// i.e. inverse_normal_cdf(0.5^(1/n)).
double solve_delta_max_cf(std::size_t n);

/// Shift by -delta, then max/mean over the rows of a single cloud -> [1 x c].
Tensor ema_forward(const Tensor& x, const EMAConfig& cfg);
/// Batched form: `groups` consecutive blocks of rows -> [groups x c]. Logs a
/// warning (once per process) when the block size differs from cfg.n under ema-max.
Tensor ema_forward_groups(const Tensor& x, std::size_t groups, const EMAConfig& cfg);

}  // namespace bipoint
