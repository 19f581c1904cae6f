#include "bipoint/entropy.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include "bipoint/error.hpp"

namespace bipoint {

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("binary_entropy: p outside [0, 1]");
  if (p == 0.0 || p == 1.0) return 0.0;
  // log1p on the side near 1 keeps the small term once 1 - p rounds to 1
  const double q = 1.0 - p;
  const double lp = p > 0.5 ? std::log1p(-q) : std::log(p);
  const double lq = p < 0.5 ? std::log1p(-p) : std::log(q);
  return -(p * lp + q * lq) / std::numbers::ln2;
}

double maxpool_entropy(std::size_t n, double p_neg) {
  if (n == 0) throw DomainError("maxpool_entropy: n must be >= 1");
  if (!(p_neg >= 0.0 && p_neg <= 1.0)) throw DomainError("maxpool_entropy: p_neg outside [0, 1]");
  return binary_entropy(std::pow(p_neg, static_cast<double>(n)));
}

double log2_maxpool_entropy(std::size_t n, double p_neg) {
  if (n == 0) throw DomainError("log2_maxpool_entropy: n must be >= 1");
  if (!(p_neg >= 0.0 && p_neg <= 1.0)) throw DomainError("log2_maxpool_entropy: p_neg outside [0, 1]");
  if (p_neg == 0.0 || p_neg == 1.0) return -std::numeric_limits<double>::infinity();
  const double ln_q = static_cast<double>(n) * std::log(p_neg);
  constexpr double kLn2 = std::numbers::ln2;
  // Below e^-600 the (1-q) term equals q/ln2 to far better than double
  // precision, so H = q * (-log2 q + 1/ln2).
  if (ln_q < -600.0) return ln_q / kLn2 + std::log2(-ln_q / kLn2 + 1.0 / kLn2);
  return std::log2(binary_entropy(std::exp(ln_q)));
}

CollapseVerdict verify_entropy_collapse(double p_neg, std::span<const std::size_t> n_list) {
  if (!(p_neg > 0.0 && p_neg < 1.0)) throw DomainError("verify_entropy_collapse: p_neg must lie in (0, 1)");
  if (n_list.empty()) throw EmptyInputError("verify_entropy_collapse: empty n list");
  CollapseVerdict v;
  v.n_values.assign(n_list.begin(), n_list.end());
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (i > 0 && n_list[i] <= n_list[i - 1]) throw ContractError("verify_entropy_collapse: n list must be ascending");
    v.log2_entropy.push_back(log2_maxpool_entropy(n_list[i], p_neg));
  }
  std::size_t start = 0;
  for (std::size_t i = 1; i < v.log2_entropy.size(); ++i)
    if (!(v.log2_entropy[i] < v.log2_entropy[i - 1])) start = i;
  v.onset = v.n_values[start];
  v.tail_strictly_decreasing = true;
  for (std::size_t i = start + 1; i < v.log2_entropy.size(); ++i)
    v.tail_strictly_decreasing = v.tail_strictly_decreasing && v.log2_entropy[i] < v.log2_entropy[i - 1];
  return v;
}

EntropyReport measure_feature_entropy(const BitMatrix& features, std::string context) {
  const std::size_t s = features.rows(), c = features.cols();
  if (s < 2) throw SampleError("measure_feature_entropy: need at least two samples, got " + std::to_string(s));
  EntropyReport r;
  r.context = std::move(context);
  r.samples = s;
  r.p_pos.assign(c, 0.0);
  r.entropy_bits.assign(c, 0.0);
  std::vector<std::size_t> pos(c, 0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < c; ++j) pos[j] += features.bit(i, j);
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    r.p_pos[j] = static_cast<double>(pos[j]) / static_cast<double>(s);
    r.entropy_bits[j] = binary_entropy(r.p_pos[j]);
    total += r.entropy_bits[j];
  }
  r.mean_entropy = c ? total / static_cast<double>(c) : 0.0;
  return r;
}

EntropyReport measure_feature_entropy(const Tensor& features, std::string context) {
  if (features.rank() != 2) throw DimensionError("measure_feature_entropy: expected [samples x channels]");
  return measure_feature_entropy(BitMatrix::pack_signs(features.values(), features.shape()[0], features.shape()[1]),
                                 std::move(context));
}

double homogenization_score(const BitMatrix& signs) {
  const std::size_t s = signs.rows(), c = signs.cols();
  if (s < 2) throw SampleError("homogenization_score: need at least two rows");
  if (c == 0) throw EmptyInputError("homogenization_score: no channels");
  // Padding bits are zero in both rows, so they never count as disagreement.
  double total = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    const auto a = signs.row(i);
    for (std::size_t j = i + 1; j < s; ++j) {
      const auto b = signs.row(j);
      std::size_t diff = 0;
      for (std::size_t w = 0; w < a.size(); ++w) diff += std::popcount(a[w] ^ b[w]);
      total += 1.0 - static_cast<double>(diff) / static_cast<double>(c);
    }
  }
  return total / (0.5 * static_cast<double>(s) * static_cast<double>(s - 1));
}

double homogenization_score(const Tensor& pooled) {
  if (pooled.rank() != 2) throw DimensionError("homogenization_score: expected [samples x channels]");
  return homogenization_score(BitMatrix::pack_signs(pooled.values(), pooled.shape()[0], pooled.shape()[1]));
}

double ste_saturation_ratio(std::span<const double> x) {
  if (x.empty()) return 0.0;
  std::size_t sat = 0;
  for (double v : x) sat += std::abs(v) >= 1.0;
  return static_cast<double>(sat) / static_cast<double>(x.size());
}

double ste_saturation_ratio(const Tensor& x) { return ste_saturation_ratio(x.values()); }

}  // namespace bipoint
