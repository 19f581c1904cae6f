#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bipoint/aggregation.hpp"
#include "bipoint/binarize.hpp"
#include "bipoint/tensor.hpp"

namespace bipoint {

// PointNet-style classifier: a shared per-point MLP, one aggregation over the
// points of each cloud, and an MLP head. Clouds in a batch are stacked row-wise,
// so a batch of B clouds with n points is a [B*n x 3] tensor.
//
// Block = linear (dense or bi-linear) -> batch norm (if kept) -> activation.
// Full precision uses ReLU; binarized models use hardtanh, whose output is
// then signed inside the next bi-linear layer. The last point-wise block has
// no activation: its batch-normalized output goes straight into aggregation.

enum class BnMode { Kept, Merged, Dropped };
enum class Activation { None, ReLU, HardTanh };

std::string_view to_string(BnMode mode);
BnMode parse_bn_mode(std::string_view text);
std::string_view to_string(Activation act);

struct ModelSpec {
  std::vector<std::size_t> point_widths{3, 64, 64, 64, 128, 1024};
  /// Head hidden widths; the first entry must equal the last point width.
  std::vector<std::size_t> head_widths{1024, 512, 256};
  std::size_t num_classes = 4;
  std::size_t n_points = 1024;
  EMAConfig aggregation = EMAConfig{AggregationKind::PlainMax, 1024, 0.0};

  bool binarized = false;  // middle layers bi-linear
  bool first_layer_fp = true;
  bool last_layer_fp = true;
  bool lsr = true;  // learnable per-layer scale; false gives the BNN baseline
  BnMode bn_mode = BnMode::Kept;

  bool use_tnet = false;
  std::vector<std::size_t> tnet_point_widths{3, 64, 128, 1024};
  std::vector<std::size_t> tnet_head_widths{1024, 512, 256};
  double reg_weight = 0.001;

  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  /// ConfigError on inconsistent widths or flags.
  void validate() const;

  static ModelSpec full_precision(std::size_t num_classes, std::size_t n_points);
  /// EMA-max + LSR binarized model.
  static ModelSpec bipointnet(std::size_t num_classes, std::size_t n_points,
                              AggregationKind kind = AggregationKind::EmaMax);
  /// Plain max pooling, scale fixed at 1.
  static ModelSpec bnn(std::size_t num_classes, std::size_t n_points);
};

struct Block {
  std::string name;
  bool binary = false;
  Tensor weight;  // dense [in x out]; unused when binary
  Tensor bias;    // [out]; undefined when absent
  BiLinearLayer bi;
  bool has_bn = false;
  Tensor gamma, beta;
  BatchNormStats stats;
  Activation act = Activation::None;

  std::size_t in_features() const;
  std::size_t out_features() const;
};

struct LayerScale {
  std::string name;
  double alpha = 1.0;
  double float_std = 0.0;   // std(x . W_latent)
  double binary_std = 0.0;  // std(alpha * sign(x) . sign(W_latent))
};

struct ForwardOptions {
  bool update_running_stats = true;
  /// Initialize each bi-linear layer's scale from its actual input on the way through.
  bool calibrate = false;
  /// Keep the tensors that feed sign() (for saturation statistics).
  bool record_sign_inputs = false;
  std::vector<LayerScale>* scales = nullptr;
};

struct ForwardResult {
  Tensor logits;     // [B x k]
  Tensor pooled;     // aggregated global feature after the offset, [B x c]
  Tensor transform;  // [B x 9] when the T-Net is enabled
  Tensor reg_loss;   // mean orthogonality penalty (scalar) when the T-Net is enabled
  std::vector<Tensor> sign_inputs;
};

class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  ForwardResult forward(const Tensor& points, std::size_t batch, Mode mode, const ForwardOptions& opts = {});
  /// Cross-entropy plus reg_weight * orthogonality penalty.
  Tensor loss(const ForwardResult& out, std::span<const std::size_t> labels) const;

  /// One train-mode pass (running statistics untouched) that initializes every
  /// learnable scale from the input that layer actually sees, in graph order.
  void lsr_calibrate(const Tensor& points, std::size_t batch);
  /// Float vs binarized output spread of every bi-linear layer on this batch.
  std::vector<LayerScale> layer_scales(const Tensor& points, std::size_t batch);

  std::vector<Tensor> parameters();
  void clip_latent();
  std::size_t bilinear_count() const;
  std::size_t alpha_count() const;
  std::size_t parameter_count() const;
  bool calibrated() const;

  std::vector<Block>& tnet_point() { return tnet_point_; }
  std::vector<Block>& tnet_head() { return tnet_head_; }
  std::vector<Block>& point() { return point_; }
  std::vector<Block>& head() { return head_; }
  const std::vector<Block>& tnet_point() const { return tnet_point_; }
  const std::vector<Block>& tnet_head() const { return tnet_head_; }
  const std::vector<Block>& point() const { return point_; }
  const std::vector<Block>& head() const { return head_; }

  /// Every block in graph order (T-Net first).
  std::vector<const Block*> blocks() const;
  std::vector<Block*> blocks();

  /// Deep copy; a plain copy shares parameter storage.
  Model clone() const;

  /// Blank model with the given spec and no blocks (checkpoint loading).
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}

 private:
  ModelSpec spec_;
  std::vector<Block> tnet_point_, tnet_head_, point_, head_;
};

/// ||I - z z^T||_F^2 for a 3x3 matrix given as a [3x3] or [1x9] tensor.
Tensor tnet_regularizer(const Tensor& z);
/// Row-wise penalty for a batch of flattened transforms [B x 9] -> mean scalar.
Tensor tnet_regularizer_batch(const Tensor& transforms);
/// Applies each cloud's 3x3 transform: rows of block b are multiplied by T_b.
Tensor apply_point_transform(const Tensor& points, const Tensor& transforms);

/// Runs a single block (used by deployment checks and tests).
Tensor block_forward(Block& block, const Tensor& x, Mode mode, const ForwardOptions& opts,
                     std::vector<Tensor>* sign_inputs = nullptr);

}  // namespace bipoint
