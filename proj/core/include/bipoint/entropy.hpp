#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bipoint/binarize.hpp"
#include "bipoint/tensor.hpp"

namespace bipoint {

/// -p log2 p - (1-p) log2(1-p), with 0 log 0 = 0. DomainError outside [0, 1].
double binary_entropy(double p);

/// Entropy in bits of sign(max of n iid draws) when each draw is negative
/// with probability p_neg: binary_entropy(p_neg^n).
double maxpool_entropy(std::size_t n, double p_neg);

/// log2 of maxpool_entropy, evaluated without forming p_neg^n, so it stays
/// finite long after the entropy itself underflows (n beyond ~1080 at 0.5).
/// Returns -inf only when the entropy is exactly zero (p_neg in {0, 1}).
double log2_maxpool_entropy(std::size_t n, double p_neg);

struct CollapseVerdict {
  std::vector<std::size_t> n_values;
  std::vector<double> log2_entropy;
  /// Smallest n in the list from which the sequence is strictly decreasing.
  std::size_t onset = 0;
  bool tail_strictly_decreasing = false;
};

/// Evaluates the max-pool entropy over an ascending list of n and locates the
/// point beyond which it only decreases. Comparisons use the log2 form, which
/// orders identically and does not underflow.
CollapseVerdict verify_entropy_collapse(double p_neg, std::span<const std::size_t> n_list);

struct EntropyReport {
  std::string context;
  std::size_t samples = 0;
  std::vector<double> p_pos;         // empirical P(+1) per channel
  std::vector<double> entropy_bits;  // per channel
  double mean_entropy = 0.0;
};

/// Per-channel empirical entropy over the rows (samples) of a sign matrix.
/// SampleError with fewer than two rows.
EntropyReport measure_feature_entropy(const BitMatrix& features, std::string context = {});
/// Same, taking sign(x) of a dense [s x c] tensor.
EntropyReport measure_feature_entropy(const Tensor& features, std::string context = {});

/// Mean pairwise agreement rate of the sign patterns of the rows; 1 means every
/// row carries the same pattern.
double homogenization_score(const BitMatrix& signs);
double homogenization_score(const Tensor& pooled);

/// Fraction of entries with |x| >= 1, i.e. where the straight-through
/// gradient is zero.
double ste_saturation_ratio(std::span<const double> pre_activations);
double ste_saturation_ratio(const Tensor& pre_activations);

}  // namespace bipoint
