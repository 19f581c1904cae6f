#include "bipoint/binarize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "bipoint/error.hpp"

namespace bipoint {

namespace {

constexpr std::size_t kWordBits = 64;

std::size_t words_for(std::size_t cols) { return (cols + kWordBits - 1) / kWordBits; }

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

Tensor sign_ste(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = binary_sign(xv[i]);
  return detail::make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& node) {
    auto& in = node.inputs[0];
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in->data[i];
      if (v > -1.0 && v < 1.0) g[i] += node.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// BitMatrix

BitMatrix::BitMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), words_per_row_(words_for(cols)), words_(rows * words_for(cols), 0) {}

BitMatrix BitMatrix::pack(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("pack: value count does not match shape");
  BitMatrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::uint64_t* row = m.words_.data() + r * m.words_per_row_;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = values[r * cols + c];
      if (v == 1.0) {
        row[c / kWordBits] |= std::uint64_t{1} << (c % kWordBits);
      } else if (v != -1.0) {
        throw EncodingError("pack: entry (" + std::to_string(r) + ", " + std::to_string(c) +
                            ") is not +-1");
      }
    }
  }
  return m;
}

BitMatrix BitMatrix::pack_signs(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("pack_signs: value count does not match shape");
  BitMatrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::uint64_t* row = m.words_.data() + r * m.words_per_row_;
    const double* src = values.data() + r * cols;
    for (std::size_t w = 0; w < m.words_per_row_; ++w) {
      const std::size_t begin = w * kWordBits;
      const std::size_t end = std::min(cols, begin + kWordBits);
      std::uint64_t word = 0;
      for (std::size_t c = begin; c < end; ++c)
        word |= static_cast<std::uint64_t>(src[c] >= 0.0) << (c - begin);
      row[w] = word;
    }
  }
  return m;
}

std::vector<double> BitMatrix::unpack() const {
  std::vector<double> out(rows_ * cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out[r * cols_ + c] = bit(r, c) ? 1.0 : -1.0;
  return out;
}

bool BitMatrix::bit(std::size_t r, std::size_t c) const {
  return (words_[r * words_per_row_ + c / kWordBits] >> (c % kWordBits)) & 1U;
}

void BitMatrix::set_bit(std::size_t r, std::size_t c, bool positive) {
  auto& word = words_[r * words_per_row_ + c / kWordBits];
  const std::uint64_t mask = std::uint64_t{1} << (c % kWordBits);
  word = positive ? (word | mask) : (word & ~mask);
}

BitMatrix transpose(const BitMatrix& m) {
  BitMatrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m.bit(r, c)) t.set_bit(c, r, true);
  return t;
}

// ---------------------------------------------------------------------------
// XNOR-popcount GEMM

IntMatrix xnor_gemm(const BitMatrix& a, const BitMatrix& w_transposed) {
  if (a.cols() != w_transposed.cols()) {
    throw DimensionError("xnor_gemm: inner dimensions disagree (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(w_transposed.cols()) + ")");
  }
  const std::size_t n = a.rows(), k = w_transposed.rows(), m = a.cols();
  const std::size_t words = a.words_per_row();
  IntMatrix out{n, k, std::vector<std::int32_t>(n * k)};
  const auto m_int = static_cast<std::int32_t>(m);
  const std::uint64_t* aw = a.words().data();
  const std::uint64_t* ww = w_transposed.words().data();

  // Four activation rows share each weight row load.
  constexpr std::size_t kRowBlock = 4;
  std::size_t i = 0;
  for (; i + kRowBlock <= n; i += kRowBlock) {
    const std::uint64_t* a0 = aw + (i + 0) * words;
    const std::uint64_t* a1 = aw + (i + 1) * words;
    const std::uint64_t* a2 = aw + (i + 2) * words;
    const std::uint64_t* a3 = aw + (i + 3) * words;
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint64_t* wr = ww + j * words;
      std::int32_t c0 = 0, c1 = 0, c2 = 0, c3 = 0;
      for (std::size_t w = 0; w < words; ++w) {
        const std::uint64_t wv = wr[w];
        c0 += std::popcount(a0[w] ^ wv);
        c1 += std::popcount(a1[w] ^ wv);
        c2 += std::popcount(a2[w] ^ wv);
        c3 += std::popcount(a3[w] ^ wv);
      }
      out.values[(i + 0) * k + j] = m_int - 2 * c0;
      out.values[(i + 1) * k + j] = m_int - 2 * c1;
      out.values[(i + 2) * k + j] = m_int - 2 * c2;
      out.values[(i + 3) * k + j] = m_int - 2 * c3;
    }
  }
  for (; i < n; ++i) {
    const std::uint64_t* ar = aw + i * words;
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint64_t* wr = ww + j * words;
      std::int32_t c = 0;
      for (std::size_t w = 0; w < words; ++w) c += std::popcount(ar[w] ^ wr[w]);
      out.values[i * k + j] = m_int - 2 * c;
    }
  }
  return out;
}

IntMatrix xnor_gemm_natural(const BitMatrix& a, const BitMatrix& w) {
  if (a.cols() != w.rows()) {
    throw DimensionError("xnor_gemm: inner dimensions disagree (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(w.rows()) + ")");
  }
  return xnor_gemm(a, transpose(w));
}

// ---------------------------------------------------------------------------
// BiLinearLayer

Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Xoshiro256& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Tensor::from_values({fan_in, fan_out}, std::move(w), true);
}

BiLinearLayer::BiLinearLayer(std::size_t in_features, std::size_t out_features, Xoshiro256& rng,
                             bool learnable_scale)
    : in_(in_features),
      out_(out_features),
      latent_w_(kaiming_uniform(in_features, out_features, rng)),
      alpha_(Tensor::scalar(learnable_scale ? 0.0 : 1.0, learnable_scale)),
      learnable_scale_(learnable_scale),
      alpha_initialized_(!learnable_scale) {}

BiLinearLayer BiLinearLayer::from_parts(Tensor latent_w, double alpha, bool learnable_scale) {
  if (latent_w.rank() != 2) throw DimensionError("bi-linear: latent weight must be rank 2");
  BiLinearLayer layer;
  layer.in_ = latent_w.shape()[0];
  layer.out_ = latent_w.shape()[1];
  layer.latent_w_ = std::move(latent_w);
  layer.latent_w_.set_requires_grad(true);
  layer.learnable_scale_ = learnable_scale;
  layer.alpha_ = Tensor::scalar(learnable_scale ? 0.0 : 1.0, learnable_scale);
  layer.alpha_initialized_ = !learnable_scale;
  if (learnable_scale && alpha > 0.0) layer.set_alpha(alpha);
  return layer;
}

BiLinearLayer BiLinearLayer::clone() const {
  BiLinearLayer copy = *this;
  const auto w = latent_w_.values();
  copy.latent_w_ = Tensor::from_values(latent_w_.shape(), {w.begin(), w.end()}, latent_w_.requires_grad());
  copy.alpha_ = Tensor::scalar(alpha_.item(), alpha_.requires_grad());
  return copy;
}

double BiLinearLayer::alpha_value() const { return alpha_.item(); }

void BiLinearLayer::set_alpha(double value) {
  if (!(value > 0.0) || !std::isfinite(value)) throw InitializationError("alpha must be positive and finite");
  alpha_.values()[0] = value;
  alpha_initialized_ = true;
}

void BiLinearLayer::require_initialized() const {
  if (!alpha_initialized_) throw StateError("bi-linear layer used before its scale was initialized");
}

Tensor BiLinearLayer::forward(const Tensor& x) const {
  require_initialized();
  if (x.rank() != 2 || x.shape()[1] != in_) {
    throw DimensionError("bi-linear: expected input width " + std::to_string(in_) + ", got " +
                         shape_string(x.shape()));
  }
  if (mode_ == LayerMode::Deploy) {
    const std::size_t n = x.shape()[0];
    const auto packed = BitMatrix::pack_signs(x.values(), n, in_);
    const auto ints = xnor_gemm(packed, packed_wt_);
    const double a = alpha_value();
    std::vector<double> out(ints.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * static_cast<double>(ints.values[i]);
    return Tensor::from_values({n, out_}, std::move(out));
  }
  const Tensor product = matmul(sign_ste(x), sign_ste(latent_w_));
  return scale(product, alpha_);
}

void BiLinearLayer::lsr_init(const Tensor& calibration_x) {
  if (!learnable_scale_) return;
  if (calibration_x.numel() == 0) throw InitializationError("lsr_init: empty calibration batch");
  NoGradGuard no_grad;
  const Tensor full = matmul(calibration_x, latent_w_);
  const Tensor binary = matmul(sign_ste(calibration_x), sign_ste(latent_w_));
  const double num = population_std(full.values());
  const double den = population_std(binary.values());
  if (!(den > 0.0)) throw InitializationError("lsr_init: binarized output has zero spread");
  if (!(num > 0.0)) throw InitializationError("lsr_init: full-precision output has zero spread");
  set_alpha(num / den);
}

void BiLinearLayer::set_mode(LayerMode mode) {
  if (mode == LayerMode::Deploy) {
    packed_wt_ = transpose(BitMatrix::pack_signs(latent_w_.values(), in_, out_));
  }
  mode_ = mode;
}

void BiLinearLayer::clip_latent() {
  for (auto& v : latent_w_.values()) v = std::clamp(v, -1.0, 1.0);
  // Adam can walk a scale that batch norm makes irrelevant through zero.
  if (learnable_scale_ && alpha_initialized_) alpha_.values()[0] = std::max(alpha_.values()[0], kMinAlpha);
}

Tensor bnn_linear_forward(const Tensor& x, const Tensor& latent_w) {
  return matmul(sign_ste(x), sign_ste(latent_w));
}

}  // namespace bipoint
