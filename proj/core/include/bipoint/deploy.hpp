#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "bipoint/binarize.hpp"
#include "bipoint/model.hpp"

namespace bipoint {

// Inference-only form of a trained model.
//
//  a  full-precision model, batch norm folded into the preceding linear layer
//  b  middle layers packed (XNOR/popcount), alpha folded into the batch-norm
//     scale, hardtanh dropped wherever the consumer only looks at the sign
//  c  b + last layer binarized
//  d  b + first layer(s) binarized
//  e  b + both
//  f  model trained without batch norm; alpha dropped wherever a sign follows,
//     kept where a real value is consumed (full-precision last layer, T-Net
//     output). An ema-max offset after a dropped alpha becomes delta / alpha.
//
// Layers that were full precision in the trained model and get binarized by
// c/d/e receive the post-hoc scale mean(|W|).
enum class DeployVariant { A, B, C, D, E, F };

std::string_view to_string(DeployVariant v);
DeployVariant parse_variant(std::string_view text);

struct DeployOptions {
  /// Round every stored real parameter to float32 (the checkpoint payload
  /// precision) so a saved and reloaded model computes identical outputs.
  bool round_to_f32 = true;
};

struct DeployLayer {
  std::string name;
  bool binary = false;
  std::size_t in = 0, out = 0;
  Tensor weight;         // dense [in x out]
  BitMatrix packed_wt;   // binary, transposed [out x in]
  bool has_alpha = false;
  double alpha = 1.0;    // binary output multiplier when no affine absorbs it
  std::vector<double> bias;   // dense only, may be empty
  std::vector<double> scale;  // folded batch norm (binary layers); empty when absent
  std::vector<double> shift;
  Activation act = Activation::None;

  std::size_t binary_bits() const;
  std::size_t float_params() const;
};

class DeployModel {
 public:
  DeployVariant variant = DeployVariant::B;
  ModelSpec spec;  // spec of the trained model (bn_mode reports merged/dropped)
  double tnet_delta = 0.0;
  double delta = 0.0;
  std::vector<DeployLayer> tnet_point, tnet_head, point, head;

  /// Logits [B x k] for a stacked batch of clouds.
  Tensor forward(const Tensor& points, std::size_t batch) const;
  std::vector<std::size_t> predict(const Tensor& points, std::size_t batch) const;

  std::vector<const DeployLayer*> layers() const;
};

DeployModel apply_deployment(const Model& model, DeployVariant variant, const DeployOptions& opts = {});

struct StorageComponent {
  std::string name;
  std::size_t binary_bits = 0;
  std::size_t float_params = 0;
  double bytes() const { return static_cast<double>(binary_bits) / 8.0 + 4.0 * static_cast<double>(float_params); }
};

struct StorageReport {
  DeployVariant variant = DeployVariant::A;
  std::vector<StorageComponent> components;
  std::size_t header_bytes = 64;
  std::size_t total_bytes = 0;
  std::size_t baseline_bytes = 0;  // variant a of the same architecture
  double total_mb() const;         // MiB
  double ratio() const;            // baseline / total
};

inline constexpr std::size_t kStorageHeaderBytes = 64;

/// 1 bit per binarized weight, 32 bits per real parameter (weights, biases,
/// folded batch-norm scale/shift, alpha), plus a fixed header.
StorageReport storage_report(const DeployModel& model);
/// Size of variant a for a spec, computed from the widths alone.
std::size_t full_precision_bytes(const ModelSpec& spec);

}  // namespace bipoint
