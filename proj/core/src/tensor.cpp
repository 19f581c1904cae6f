#include "bipoint/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "bipoint/error.hpp"

namespace bipoint {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::uint64_t next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

void require_rank2(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " +
                         (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Exact column sum that does not depend on row order: every value is mapped
// onto a 2^-60 fixed-point grid and the integers are added. Falls back to a
// plain sum for magnitudes that would overflow the accumulator.
double order_independent_sum(const double* column, std::size_t stride, std::size_t count) {
  constexpr int kFracBits = 60;
  constexpr double kLimit = 0x1.0p46;
  __int128 acc = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double v = column[i * stride];
    if (!(std::fabs(v) < kLimit)) {
      double plain = 0.0;
      for (std::size_t j = 0; j < count; ++j) plain += column[j * stride];
      return plain;
    }
    acc += static_cast<__int128>(std::ldexp(v, kFracBits));
  }
  return std::ldexp(static_cast<double>(acc), -kFracBits);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& detail::TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_id();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_values({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::rows() const { return shape().empty() ? 1 : shape()[0]; }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  return shape_numel(Shape(s.begin() + 1, s.end()));
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::values() const { return node_->data; }
std::span<double> Tensor::values() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const { return node_->data[row * cols() + col]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::uint64_t Tensor::tape_id() const { return node_->id; }
bool Tensor::is_leaf() const { return !node_->backward; }

Tensor Tensor::detach() const { return from_values(shape(), node_->data, false); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("reshape: " + shape_string(shape()) + " -> " + shape_string(new_shape));
  }
  return detail::make_op(std::move(new_shape), node_->data, {*this}, [](detail::TensorNode& out) {
    detail::accumulate(out.inputs[0], out.grad);
  });
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_mode_enabled() { return t_grad_enabled; }

Tensor detail::make_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                       std::function<void(TensorNode&)> backward) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = next_id();
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

void detail::accumulate(const std::shared_ptr<TensorNode>& input, std::span<const double> values) {
  if (!input || !input->requires_grad) return;
  auto& g = input->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

// ---------------------------------------------------------------------------
// Tape

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::vector<detail::TensorNode*> stack{root.node().get()};
  std::vector<std::shared_ptr<detail::TensorNode>> found{root.node()};
  std::vector<const detail::TensorNode*> seen{root.node().get()};
  // Graph sizes are small (tens to a few hundred nodes); a sorted vector is
  // enough for the visited set.
  auto visited = [&seen](const detail::TensorNode* n) {
    return std::binary_search(seen.begin(), seen.end(), n);
  };
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    for (const auto& in : node->inputs) {
      if (!in || !in->requires_grad || visited(in.get())) continue;
      seen.insert(std::upper_bound(seen.begin(), seen.end(), in.get()), in.get());
      found.push_back(in);
      stack.push_back(in.get());
    }
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  tape.nodes_ = std::move(found);
  return tape;
}

void Tape::run_backward() {
  if (nodes_.empty()) return;
  auto& root = nodes_.back();
  auto& g = root->grad_buffer();
  std::fill(g.begin(), g.end(), 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape");
  Tape::record(loss).run_backward();
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.shape()[0], m = a.shape()[1], k = b.shape()[1];
  if (b.shape()[0] != m) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(n * k);
  MatrixMap(out.data(), n, k).noalias() =
      ConstMatrixMap(a.values().data(), n, m) * ConstMatrixMap(b.values().data(), m, k);
  return detail::make_op({n, k}, std::move(out), {a, b}, [n, m, k](detail::TensorNode& node) {
    ConstMatrixMap g(node.grad.data(), n, k);
    const auto& an = node.inputs[0];
    const auto& bn = node.inputs[1];
    if (an->requires_grad) {
      MatrixMap(an->grad_buffer().data(), n, m).noalias() +=
          g * ConstMatrixMap(bn->data.data(), m, k).transpose();
    }
    if (bn->requires_grad) {
      MatrixMap(bn->grad_buffer().data(), m, k).noalias() +=
          ConstMatrixMap(an->data.data(), n, m).transpose() * g;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& node) {
    detail::accumulate(node.inputs[0], node.grad);
    detail::accumulate(node.inputs[1], node.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& node) {
    detail::accumulate(node.inputs[0], node.grad);
    if (node.inputs[1]->requires_grad) {
      auto& g = node.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& node) {
    auto& an = node.inputs[0];
    auto& bn = node.inputs[1];
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * an->data[i];
    }
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_rowwise");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (bias.numel() != c) {
    throw DimensionError("add_rowwise: bias has " + std::to_string(bias.numel()) + " entries for " +
                         std::to_string(c) + " columns");
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto b = bias.values();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += b[j];
  return detail::make_op(x.shape(), std::move(out), {x, bias}, [n, c](detail::TensorNode& node) {
    detail::accumulate(node.inputs[0], node.grad);
    if (node.inputs[1]->requires_grad) {
      auto& g = node.inputs[1]->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += node.grad[r * c + j];
    }
  });
}

Tensor scale(const Tensor& x, const Tensor& alpha) {
  if (alpha.numel() != 1) throw DimensionError("scale: alpha must be a scalar");
  const double a = alpha.item();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.values()[i];
  return detail::make_op(x.shape(), std::move(out), {x, alpha}, [a](detail::TensorNode& node) {
    auto& xn = node.inputs[0];
    auto& an = node.inputs[1];
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * node.grad[i];
    }
    if (an->requires_grad) {
      double ga = 0.0;
      for (std::size_t i = 0; i < node.grad.size(); ++i) ga += node.grad[i] * xn->data[i];
      an->grad_buffer()[0] += ga;
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.values()[i];
  return detail::make_op(x.shape(), std::move(out), {x}, [factor](detail::TensorNode& node) {
    auto& g = node.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * node.grad[i];
  });
}

Tensor shift(const Tensor& x, double offset) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + offset;
  return detail::make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& node) {
    detail::accumulate(node.inputs[0], node.grad);
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return detail::make_op({}, {total}, {x}, [](detail::TensorNode& node) {
    auto& g = node.inputs[0]->grad_buffer();
    for (double& v : g) v += node.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw EmptyInputError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.values()[i]);
  return detail::make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& node) {
    auto& in = node.inputs[0];
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in->data[i] > 0.0) g[i] += node.grad[i];
  });
}

Tensor hardtanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.values()[i], -1.0, 1.0);
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
// Batch norm

BatchNormStats::BatchNormStats(std::size_t channels)
    : running_mean(channels, 0.0), running_var(channels, 1.0) {}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  Mode mode, bool update_running) {
  require_rank2(x, "batch_norm");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
  }
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> out(n * c);

  if (mode == Mode::Eval) {
    std::vector<double> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + stats.eps);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j)
        out[r * c + j] = gv[j] * (xv[r * c + j] - stats.running_mean[j]) * inv_std[j] + bv[j];
    std::vector<double> mean_snapshot = stats.running_mean;
    return detail::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [n, c, inv_std, mean_snapshot](detail::TensorNode& node) {
          auto& xn = node.inputs[0];
          auto& gn = node.inputs[1];
          auto& bn = node.inputs[2];
          const auto& g = node.grad;
          if (xn->requires_grad) {
            auto& gx = xn->grad_buffer();
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[r * c + j] * gn->data[j] * inv_std[j];
          }
          if (gn->requires_grad) {
            auto& gg = gn->grad_buffer();
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < c; ++j)
                gg[j] += g[r * c + j] * (xn->data[r * c + j] - mean_snapshot[j]) * inv_std[j];
          }
          if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
          }
        });
  }

  if (n < 2) throw DegenerateBatchError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
  std::vector<double> mu(c, 0.0), var(c, 0.0), inv_std(c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
  for (auto& m : mu) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[r * c + j] - mu[j];
      var[j] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(n);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + stats.eps);

  std::vector<double> xhat(n * c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mu[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }

  if (update_running) {
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < c; ++j) {
      stats.running_mean[j] = (1.0 - stats.momentum) * stats.running_mean[j] + stats.momentum * mu[j];
      stats.running_var[j] = (1.0 - stats.momentum) * stats.running_var[j] + stats.momentum * var[j] * unbias;
    }
  }

  return detail::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::TensorNode& node) {
        auto& xn = node.inputs[0];
        auto& gn = node.inputs[1];
        auto& bn = node.inputs[2];
        const auto& g = node.grad;
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            sum_g[j] += g[r * c + j];
            sum_gx[j] += g[r * c + j] * xhat[r * c + j];
          }
        if (gn->requires_grad) {
          auto& gg = gn->grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              const double k = gn->data[j] * inv_std[j];
              gx[r * c + j] += k * (g[r * c + j] - inv_n * sum_g[j] - xhat[r * c + j] * inv_n * sum_gx[j]);
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling

Tensor pool_points(const Tensor& x, PoolKind kind) { return pool_groups(x, 1, kind); }

Tensor pool_groups(const Tensor& x, std::size_t groups, PoolKind kind) {
  require_rank2(x, "pool_groups");
  const std::size_t rows = x.shape()[0], c = x.shape()[1];
  if (rows == 0 || groups == 0) throw EmptyInputError("pool: no points to aggregate");
  if (rows % groups != 0) {
    throw DimensionError("pool: " + std::to_string(rows) + " rows do not split into " +
                         std::to_string(groups) + " equal groups");
  }
  const std::size_t per = rows / groups;
  const auto xv = x.values();
  std::vector<double> out(groups * c);

  if (kind == PoolKind::Max) {
    std::vector<std::size_t> arg(groups * c);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = g * per;
      for (std::size_t j = 0; j < c; ++j) {
        out[g * c + j] = xv[base * c + j];
        arg[g * c + j] = base;
      }
      for (std::size_t r = base + 1; r < base + per; ++r)
        for (std::size_t j = 0; j < c; ++j)
          if (xv[r * c + j] > out[g * c + j]) {  // strict: first index wins ties
            out[g * c + j] = xv[r * c + j];
            arg[g * c + j] = r;
          }
    }
    return detail::make_op({groups, c}, std::move(out), {x}, [c, arg = std::move(arg)](detail::TensorNode& node) {
      auto& gx = node.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * c + (i % c)] += node.grad[i];
    });
  }

  const double inv = 1.0 / static_cast<double>(per);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < c; ++j)
      out[g * c + j] = order_independent_sum(xv.data() + g * per * c + j, c, per) * inv;
  return detail::make_op({groups, c}, std::move(out), {x}, [per, c, inv](detail::TensorNode& node) {
    auto& gx = node.inputs[0]->grad_buffer();
    const std::size_t groups = node.grad.size() / c;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t r = g * per; r < (g + 1) * per; ++r)
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += node.grad[g * c + j] * inv;
  });
}

// ---------------------------------------------------------------------------
// Loss

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  if (n == 0) throw EmptyInputError("softmax_cross_entropy: empty batch");
  for (auto l : labels)
    if (l >= k) throw IndexError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");

  const auto z = logits.values();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = std::exp(row[j] - mx);
      denom += probs[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= denom;
    loss += -(row[labels[r]] - mx - std::log(denom));
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> label_copy(labels.begin(), labels.end());
  return detail::make_op({}, {loss}, {logits},
                         [n, k, probs = std::move(probs), label_copy = std::move(label_copy)](detail::TensorNode& node) {
                           auto& g = node.inputs[0]->grad_buffer();
                           const double s = node.grad[0] / static_cast<double>(n);
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t j = 0; j < k; ++j) {
                               const double target = (j == label_copy[r]) ? 1.0 : 0.0;
                               g[r * k + j] += s * (probs[r * k + j] - target);
                             }
                         });
}

// ---------------------------------------------------------------------------
// Optimization

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamHyper& hyper) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.m[i].size() != p.numel()) throw DimensionError("adam_step: state shape mismatch");
    auto w = p.values();
    const auto g = std::as_const(p).grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + hyper.eps);
    }
  }
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double base_lr) {
  if (total_epochs == 0) return base_lr;
  const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return base_lr * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

}  // namespace bipoint
