#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// Every op that sees at least one input requiring a gradient records a node
// holding its inputs and a backward closure. backward(loss) collects the
// nodes reachable from the loss, orders them by creation id (inputs always
// carry a smaller id than the op consuming them) and runs each closure once
// in reverse. The graph is rebuilt on every forward pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bipoint {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  std::vector<double>& grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Leading dimension (1 for scalars).
  std::size_t rows() const;
  /// Product of the trailing dimensions (numel for rank-1).
  std::size_t cols() const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Mutable view for in-place parameter updates; never used on tape outputs.
  std::span<double> values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad();
  void zero_grad();

  std::uint64_t tape_id() const;
  bool is_leaf() const;

  /// Same values, no history.
  Tensor detach() const;
  /// Shares storage but reinterprets the shape (numel must match). Gradients
  /// flow through unchanged.
  Tensor reshape(Shape shape) const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Disables recording for the lifetime of the guard (thread local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

/// Creates an op output. The backward closure is attached only when recording
/// is enabled and some input requires a gradient.
Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward);

/// Adds `values` into the input's gradient if that input requires one.
void accumulate(const std::shared_ptr<TensorNode>& input, std::span<const double> values);

}  // namespace detail

/// Topologically ordered record of the ops reachable from a root tensor.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::TensorNode>>& nodes() const { return nodes_; }

  /// Seeds d(root)/d(root) = 1 and runs every backward closure once, in reverse order.
  void run_backward();

 private:
  std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
};

/// Populates .grad() of every tape tensor reachable from a scalar loss.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. All 2-D ops take row-major [rows x cols] tensors.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x[n x c] + bias[c] broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
/// alpha * x for a scalar tensor alpha; d/dalpha = sum(g * x).
Tensor scale(const Tensor& x, const Tensor& alpha);
Tensor scale(const Tensor& x, double factor);
Tensor shift(const Tensor& x, double offset);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor relu(const Tensor& x);
/// Clamp to [-1, 1]; gradient passes only strictly inside.
Tensor hardtanh(const Tensor& x);

enum class Mode { Train, Eval };

struct BatchNormStats {
  explicit BatchNormStats(std::size_t channels = 0);

  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel standardization followed by gamma/beta. Train mode normalizes
/// with the (biased) batch variance and updates running statistics with the
/// unbiased one; eval mode uses the running statistics only.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  Mode mode, bool update_running = true);

enum class PoolKind { Max, Avg };

/// Column-wise max/mean over all rows -> [1 x c].
Tensor pool_points(const Tensor& x, PoolKind kind);
/// x holds `groups` consecutive blocks of rows; pools each block -> [groups x c].
/// Max routes the gradient to the first arg-max row of each block.
Tensor pool_groups(const Tensor& x, std::size_t groups, PoolKind kind);

/// Mean negative log-softmax at the label positions.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// ---------------------------------------------------------------------------
// Optimization.

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One Adam update over `params` using their accumulated gradients. Parameters
/// without a gradient are treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamHyper& hyper = {});

/// base_lr * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double base_lr);

}  // namespace bipoint
