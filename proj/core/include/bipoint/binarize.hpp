#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bipoint/rng.hpp"
#include "bipoint/tensor.hpp"

namespace bipoint {

/// sign(x) with sign(0) = +1.
inline double binary_sign(double x) { return x >= 0.0 ? 1.0 : -1.0; }

/// Forward: binary_sign(x). Backward (straight-through): the incoming
/// gradient passes where -1 < x < 1 and is zeroed elsewhere.
Tensor sign_ste(const Tensor& x);

/// Row-major {-1,+1} matrix stored one bit per entry. Bit 1 encodes +1, bit 0
/// encodes -1. Each row starts on a 64-bit word boundary and the padding bits
/// of its last word are kept at zero. Bit c of a row lives in word c / 64 at
/// position c % 64 (least significant bit first).
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols);

  /// Packs exact +-1 entries; anything else is an EncodingError.
  static BitMatrix pack(std::span<const double> values, std::size_t rows, std::size_t cols);
  /// Packs binary_sign(values) (never fails).
  static BitMatrix pack_signs(std::span<const double> values, std::size_t rows, std::size_t cols);

  std::vector<double> unpack() const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_row() const { return words_per_row_; }
  /// rows * ceil(cols / 64) * 8.
  std::size_t byte_size() const { return words_.size() * sizeof(std::uint64_t); }

  bool bit(std::size_t r, std::size_t c) const;
  void set_bit(std::size_t r, std::size_t c, bool positive);

  std::span<const std::uint64_t> row(std::size_t r) const {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<const std::uint64_t> words() const { return words_; }
  std::span<std::uint64_t> mutable_words() { return words_; }

  bool operator==(const BitMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
};

BitMatrix transpose(const BitMatrix& m);

struct IntMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> values;

  std::int32_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Exact +-1 matrix product via XNOR + popcount.
///
/// `a` is [n x m]; `w_transposed` is the packed transpose of the [m x k]
/// weight, i.e. [k x m], so both operands stream along rows. Entry (i, j) is
/// m - 2 * popcount(a_i XOR w_j), an integer in [-m, m] with the parity of m.
IntMatrix xnor_gemm(const BitMatrix& a, const BitMatrix& w_transposed);

/// Convenience overload taking the weight in its natural [m x k] layout.
IntMatrix xnor_gemm_natural(const BitMatrix& a, const BitMatrix& w);

enum class LayerMode { Train, Deploy };

/// Binarized linear layer with a single learnable scale (layer-wise scale
/// recovery). Output = alpha * (sign(x) . sign(latent_w)).
class BiLinearLayer {
 public:
  BiLinearLayer() = default;
  /// Latent weights drawn Kaiming-uniform over fan-in. When `learnable_scale`
  /// is false the layer is the plain BNN baseline: alpha is fixed at 1 and
  /// never trained; otherwise alpha stays uninitialized until lsr_init.
  BiLinearLayer(std::size_t in_features, std::size_t out_features, Xoshiro256& rng, bool learnable_scale);
  /// Rebuilds a layer from stored state (checkpoints). alpha <= 0 leaves it uninitialized.
  static BiLinearLayer from_parts(Tensor latent_w, double alpha, bool learnable_scale);

  /// Deep copy; a plain copy shares the weight and scale tensors.
  BiLinearLayer clone() const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  bool learnable_scale() const { return learnable_scale_; }
  bool initialized() const { return alpha_initialized_; }
  LayerMode mode() const { return mode_; }

  Tensor& latent_weight() { return latent_w_; }
  const Tensor& latent_weight() const { return latent_w_; }
  Tensor& alpha() { return alpha_; }
  const Tensor& alpha() const { return alpha_; }
  double alpha_value() const;

  /// Sets alpha directly (checkpoint loading, tests).
  void set_alpha(double value);

  /// Train: float path on the tape with straight-through gradients for both
  /// operands and d/dalpha = sum(g_Z * (B_a . B_w)). Deploy: packed
  /// XNOR-popcount product scaled by alpha; no gradients.
  Tensor forward(const Tensor& x) const;

  /// Scale initialization: alpha = std(x . W) / std(sign(x) . sign(W)) over
  /// all output entries of the calibration batch. No-op for the BNN baseline.
  void lsr_init(const Tensor& calibration_x);

  /// Switches mode; entering Deploy (re)packs sign(latent_w).
  void set_mode(LayerMode mode);
  /// Packed transpose of sign(latent_w), [out x in]. Valid in Deploy mode.
  const BitMatrix& packed_weight_transposed() const { return packed_wt_; }

  /// Keeps latent weights inside the straight-through window and alpha >= kMinAlpha.
  void clip_latent();

  static constexpr double kMinAlpha = 1e-6;

 private:
  void require_initialized() const;

  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Tensor latent_w_;
  Tensor alpha_;
  bool learnable_scale_ = true;
  bool alpha_initialized_ = false;
  LayerMode mode_ = LayerMode::Train;
  BitMatrix packed_wt_;
};

/// The BNN baseline layer: sign(x) . sign(latent_w), no scale.
Tensor bnn_linear_forward(const Tensor& x, const Tensor& latent_w);

/// Kaiming-uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Xoshiro256& rng);

}  // namespace bipoint
