#include "bipoint/model.hpp"

#include <cmath>

#include "bipoint/error.hpp"
#include "bipoint/rng.hpp"

namespace bipoint {

namespace {

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

struct BlockPlan {
  std::string name;
  std::size_t in = 0, out = 0;
  bool binary = false;
  bool bias = false;
  bool bn = false;
  Activation act = Activation::None;
  bool zero_init = false;
};

Block make_block(const BlockPlan& p, const ModelSpec& spec, Xoshiro256& rng) {
  Block b;
  b.name = p.name;
  b.binary = p.binary;
  b.act = p.act;
  if (p.binary) {
    b.bi = BiLinearLayer(p.in, p.out, rng, spec.lsr);
  } else if (p.zero_init) {
    b.weight = Tensor::zeros({p.in, p.out}, true);
  } else {
    b.weight = kaiming_uniform(p.in, p.out, rng);
  }
  if (p.bias) b.bias = Tensor::zeros({p.out}, true);
  b.has_bn = p.bn;
  if (p.bn) {
    b.gamma = Tensor::full({p.out}, 1.0, true);
    b.beta = Tensor::zeros({p.out}, true);
    b.stats = BatchNormStats(p.out);
    b.stats.eps = spec.bn_eps;
    b.stats.momentum = spec.bn_momentum;
  }
  return b;
}

// Plans a per-point MLP. The first layer reads raw coordinates and stays dense
// unless first_layer_fp is off; the last block has no activation.
std::vector<BlockPlan> plan_point_mlp(const ModelSpec& spec, const std::vector<std::size_t>& widths,
                                      const std::string& prefix) {
  std::vector<BlockPlan> plans;
  const bool bn = spec.bn_mode == BnMode::Kept;
  const Activation hidden = spec.binarized ? Activation::HardTanh : Activation::ReLU;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    BlockPlan p;
    p.name = prefix + std::to_string(i);
    p.in = widths[i];
    p.out = widths[i + 1];
    p.binary = spec.binarized && !(i == 0 && spec.first_layer_fp);
    p.bias = !p.binary && (i == 0 || !bn);
    p.bn = bn;
    p.act = i + 2 < widths.size() ? hidden : Activation::None;
    plans.push_back(p);
  }
  return plans;
}

std::vector<BlockPlan> plan_head(const ModelSpec& spec, const std::vector<std::size_t>& widths, std::size_t out,
                                 bool last_binary, bool zero_init_last, const std::string& prefix) {
  std::vector<BlockPlan> plans;
  const bool bn = spec.bn_mode == BnMode::Kept;
  const Activation hidden = spec.binarized ? Activation::HardTanh : Activation::ReLU;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    BlockPlan p;
    p.name = prefix + std::to_string(i);
    p.in = widths[i];
    p.out = widths[i + 1];
    p.binary = spec.binarized;
    p.bias = !p.binary && !bn;
    p.bn = bn;
    p.act = hidden;
    plans.push_back(p);
  }
  BlockPlan last;
  last.name = prefix + std::to_string(widths.size() - 1);
  last.in = widths.back();
  last.out = out;
  last.binary = last_binary;
  last.bias = !last_binary;
  last.zero_init = zero_init_last && !last_binary;
  plans.push_back(last);
  return plans;
}

Tensor identity_batch(std::size_t batch) {
  std::vector<double> v(batch * 9, 0.0);
  for (std::size_t b = 0; b < batch; ++b) v[b * 9] = v[b * 9 + 4] = v[b * 9 + 8] = 1.0;
  return Tensor::from_values({batch, 9}, std::move(v));
}

Tensor copy_tensor(const Tensor& t) {
  if (!t.defined()) return {};
  const auto v = t.values();
  return Tensor::from_values(t.shape(), {v.begin(), v.end()}, t.requires_grad());
}

}  // namespace

std::string_view to_string(BnMode mode) {
  switch (mode) {
    case BnMode::Kept: return "kept";
    case BnMode::Merged: return "merged";
    case BnMode::Dropped: return "dropped";
  }
  return "?";
}

BnMode parse_bn_mode(std::string_view text) {
  if (text == "kept") return BnMode::Kept;
  if (text == "merged") return BnMode::Merged;
  if (text == "dropped") return BnMode::Dropped;
  throw ConfigError("unknown bn mode '" + std::string(text) + "'");
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::HardTanh: return "hardtanh";
  }
  return "?";
}

// ---------------------------------------------------------------------------

void ModelSpec::validate() const {
  auto check_chain = [](const std::vector<std::size_t>& w, const char* what) {
    if (w.size() < 2) throw ConfigError(std::string(what) + ": need at least two widths");
    for (auto v : w)
      if (v == 0) throw ConfigError(std::string(what) + ": zero width");
  };
  check_chain(point_widths, "point widths");
  if (point_widths.front() != 3) throw ConfigError("point widths must start at 3 (xyz)");
  if (head_widths.empty() || head_widths.front() != point_widths.back()) {
    throw ConfigError("head widths must start at the last point width (" + std::to_string(point_widths.back()) +
                      ")");
  }
  for (auto v : head_widths)
    if (v == 0) throw ConfigError("head widths: zero width");
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (n_points == 0) throw ConfigError("n_points must be positive");
  if (bn_mode == BnMode::Merged) throw ConfigError("bn mode 'merged' only describes deployed models");
  if (use_tnet) {
    check_chain(tnet_point_widths, "tnet point widths");
    if (tnet_point_widths.front() != 3) throw ConfigError("tnet point widths must start at 3");
    if (tnet_head_widths.empty() || tnet_head_widths.front() != tnet_point_widths.back())
      throw ConfigError("tnet head widths must start at the last tnet point width");
  }
  if (!(reg_weight >= 0.0)) throw ConfigError("reg_weight must be non-negative");
  if (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bad batch-norm settings");
  aggregation.validate();
}

ModelSpec ModelSpec::full_precision(std::size_t num_classes, std::size_t n_points) {
  ModelSpec s;
  s.num_classes = num_classes;
  s.n_points = n_points;
  s.aggregation = EMAConfig::resolve(AggregationKind::PlainMax, n_points);
  return s;
}

ModelSpec ModelSpec::bipointnet(std::size_t num_classes, std::size_t n_points, AggregationKind kind) {
  ModelSpec s = full_precision(num_classes, n_points);
  s.binarized = true;
  s.lsr = true;
  s.aggregation = EMAConfig::resolve(kind, n_points);
  return s;
}

ModelSpec ModelSpec::bnn(std::size_t num_classes, std::size_t n_points) {
  ModelSpec s = full_precision(num_classes, n_points);
  s.binarized = true;
  s.lsr = false;
  return s;
}

std::size_t Block::in_features() const { return binary ? bi.in_features() : weight.shape()[0]; }
std::size_t Block::out_features() const { return binary ? bi.out_features() : weight.shape()[1]; }

// ---------------------------------------------------------------------------

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m(spec);
  Xoshiro256 rng(seed);
  if (spec.use_tnet) {
    for (const auto& p : plan_point_mlp(spec, spec.tnet_point_widths, "tnet.point"))
      m.tnet_point_.push_back(make_block(p, spec, rng));
    // The regression output is bi-linear in binarized models and has no batch
    // norm, so its scale is exactly what the learnable factor controls.
    for (const auto& p : plan_head(spec, spec.tnet_head_widths, 9, spec.binarized, true, "tnet.head"))
      m.tnet_head_.push_back(make_block(p, spec, rng));
  }
  for (const auto& p : plan_point_mlp(spec, spec.point_widths, "point")) m.point_.push_back(make_block(p, spec, rng));
  for (const auto& p :
       plan_head(spec, spec.head_widths, spec.num_classes, spec.binarized && !spec.last_layer_fp, false, "head"))
    m.head_.push_back(make_block(p, spec, rng));
  return m;
}

Tensor block_forward(Block& block, const Tensor& x, Mode mode, const ForwardOptions& opts,
                     std::vector<Tensor>* sign_inputs) {
  Tensor y;
  if (block.binary) {
    if (opts.calibrate) block.bi.lsr_init(x);
    if (sign_inputs) sign_inputs->push_back(x.detach());
    y = block.bi.forward(x);
    if (opts.scales) {
      NoGradGuard no_grad;
      const Tensor full = matmul(x, block.bi.latent_weight());
      opts.scales->push_back(
          LayerScale{block.name, block.bi.alpha_value(), population_std(full.values()), population_std(y.values())});
    }
  } else {
    y = matmul(x, block.weight);
    if (block.bias.defined()) y = add_rowwise(y, block.bias);
  }
  if (block.has_bn) {
    y = batch_norm(y, block.gamma, block.beta, block.stats, mode, mode == Mode::Train && opts.update_running_stats);
  }
  switch (block.act) {
    case Activation::None: break;
    case Activation::ReLU: y = relu(y); break;
    case Activation::HardTanh: y = hardtanh(y); break;
  }
  return y;
}

ForwardResult Model::forward(const Tensor& points, std::size_t batch, Mode mode, const ForwardOptions& opts) {
  if (points.rank() != 2 || points.shape()[1] != 3)
    throw DimensionError("model: expected [B*n x 3] points, got " + shape_string(points.shape()));
  if (batch == 0 || points.shape()[0] % batch != 0 || points.shape()[0] == 0)
    throw DimensionError("model: " + std::to_string(points.shape()[0]) + " rows do not split into " +
                         std::to_string(batch) + " clouds");
  ForwardResult out;
  auto* record = opts.record_sign_inputs ? &out.sign_inputs : nullptr;
  Tensor x = points;
  if (spec_.use_tnet) {
    Tensor h = points;
    for (auto& b : tnet_point_) h = block_forward(b, h, mode, opts, record);
    h = ema_forward_groups(h, batch, spec_.aggregation);
    for (auto& b : tnet_head_) h = block_forward(b, h, mode, opts, record);
    out.transform = add(h, identity_batch(batch));
    out.reg_loss = tnet_regularizer_batch(out.transform);
    x = apply_point_transform(points, out.transform);
  }
  for (auto& b : point_) x = block_forward(b, x, mode, opts, record);
  out.pooled = ema_forward_groups(x, batch, spec_.aggregation);
  Tensor h = out.pooled;
  for (auto& b : head_) h = block_forward(b, h, mode, opts, record);
  out.logits = h;
  return out;
}

Tensor Model::loss(const ForwardResult& out, std::span<const std::size_t> labels) const {
  Tensor ce = softmax_cross_entropy(out.logits, labels);
  if (out.reg_loss.defined() && spec_.reg_weight > 0.0) return add(ce, scale(out.reg_loss, spec_.reg_weight));
  return ce;
}

void Model::lsr_calibrate(const Tensor& points, std::size_t batch) {
  NoGradGuard no_grad;
  ForwardOptions opts;
  opts.update_running_stats = false;
  opts.calibrate = true;
  forward(points, batch, Mode::Train, opts);
}

std::vector<LayerScale> Model::layer_scales(const Tensor& points, std::size_t batch) {
  NoGradGuard no_grad;
  std::vector<LayerScale> scales;
  ForwardOptions opts;
  opts.update_running_stats = false;
  opts.scales = &scales;
  forward(points, batch, Mode::Train, opts);
  return scales;
}

std::vector<const Block*> Model::blocks() const {
  std::vector<const Block*> all;
  for (const auto* group : {&tnet_point_, &tnet_head_, &point_, &head_})
    for (const auto& b : *group) all.push_back(&b);
  return all;
}

std::vector<Block*> Model::blocks() {
  std::vector<Block*> all;
  for (auto* group : {&tnet_point_, &tnet_head_, &point_, &head_})
    for (auto& b : *group) all.push_back(&b);
  return all;
}

std::vector<Tensor> Model::parameters() {
  std::vector<Tensor> params;
  for (Block* b : blocks()) {
    if (b->binary) {
      params.push_back(b->bi.latent_weight());
      if (b->bi.learnable_scale()) params.push_back(b->bi.alpha());
    } else {
      params.push_back(b->weight);
    }
    if (b->bias.defined()) params.push_back(b->bias);
    if (b->has_bn) {
      params.push_back(b->gamma);
      params.push_back(b->beta);
    }
  }
  return params;
}

void Model::clip_latent() {
  for (Block* b : blocks())
    if (b->binary) b->bi.clip_latent();
}

std::size_t Model::bilinear_count() const {
  std::size_t n = 0;
  for (const Block* b : blocks()) n += b->binary;
  return n;
}

std::size_t Model::alpha_count() const {
  std::size_t n = 0;
  for (const Block* b : blocks()) n += b->binary && b->bi.learnable_scale();
  return n;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : const_cast<Model*>(this)->parameters()) n += t.numel();
  return n;
}

bool Model::calibrated() const {
  for (const Block* b : blocks())
    if (b->binary && !b->bi.initialized()) return false;
  return true;
}

Model Model::clone() const {
  Model m(spec_);
  auto copy_group = [](const std::vector<Block>& src, std::vector<Block>& dst) {
    for (const Block& b : src) {
      Block c = b;
      c.weight = copy_tensor(b.weight);
      c.bias = copy_tensor(b.bias);
      c.gamma = copy_tensor(b.gamma);
      c.beta = copy_tensor(b.beta);
      if (b.binary) c.bi = b.bi.clone();
      dst.push_back(std::move(c));
    }
  };
  copy_group(tnet_point_, m.tnet_point_);
  copy_group(tnet_head_, m.tnet_head_);
  copy_group(point_, m.point_);
  copy_group(head_, m.head_);
  return m;
}

// ---------------------------------------------------------------------------

Tensor tnet_regularizer(const Tensor& z) {
  if (z.numel() != 9) throw DimensionError("tnet_regularizer: expected a 3x3 matrix, got " + shape_string(z.shape()));
  return tnet_regularizer_batch(z.reshape({1, 9}));
}

Tensor tnet_regularizer_batch(const Tensor& t) {
  if (t.rank() != 2 || t.shape()[1] != 9)
    throw DimensionError("tnet_regularizer: expected [B x 9], got " + shape_string(t.shape()));
  const std::size_t batch = t.shape()[0];
  const auto tv = t.values();
  // M_b = T_b T_b^T - I; loss = mean_b ||M_b||^2, gradient 4 M_b T_b / B.
  std::vector<double> residual(batch * 9);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* m = tv.data() + b * 9;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += m[i * 3 + k] * m[j * 3 + k];
        const double r = s - (i == j ? 1.0 : 0.0);
        residual[b * 9 + i * 3 + j] = r;
        total += r * r;
      }
  }
  const double inv = 1.0 / static_cast<double>(batch);
  return detail::make_op({}, {total * inv}, {t}, [residual, batch, inv](detail::TensorNode& node) {
    auto& in = node.inputs[0];
    auto& g = in->grad_buffer();
    const double go = node.grad[0] * 4.0 * inv;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* r = residual.data() + b * 9;
      const double* m = in->data.data() + b * 9;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < 3; ++k) s += r[i * 3 + k] * m[k * 3 + j];
          g[b * 9 + i * 3 + j] += go * s;
        }
    }
  });
}

Tensor apply_point_transform(const Tensor& points, const Tensor& transforms) {
  if (points.rank() != 2 || points.shape()[1] != 3) throw DimensionError("apply_point_transform: points must be [R x 3]");
  if (transforms.rank() != 2 || transforms.shape()[1] != 9)
    throw DimensionError("apply_point_transform: transforms must be [B x 9]");
  const std::size_t rows = points.shape()[0], batch = transforms.shape()[0];
  if (batch == 0 || rows % batch != 0) throw DimensionError("apply_point_transform: rows do not split into clouds");
  const std::size_t per = rows / batch;
  const auto pv = points.values();
  const auto tv = transforms.values();
  std::vector<double> out(rows * 3);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* t = tv.data() + (r / per) * 9;
    for (std::size_t j = 0; j < 3; ++j)
      out[r * 3 + j] = pv[r * 3] * t[j] + pv[r * 3 + 1] * t[3 + j] + pv[r * 3 + 2] * t[6 + j];
  }
  return detail::make_op({rows, 3}, std::move(out), {points, transforms}, [per](detail::TensorNode& node) {
    const auto& p = node.inputs[0];
    const auto& t = node.inputs[1];
    const std::size_t rows = node.shape[0];
    if (p->requires_grad) {
      auto& gp = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* tm = t->data.data() + (r / per) * 9;
        const double* g = node.grad.data() + r * 3;
        for (std::size_t i = 0; i < 3; ++i) gp[r * 3 + i] += g[0] * tm[i * 3] + g[1] * tm[i * 3 + 1] + g[2] * tm[i * 3 + 2];
      }
    }
    if (t->requires_grad) {
      auto& gt = t->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double* gm = gt.data() + (r / per) * 9;
        const double* x = p->data.data() + r * 3;
        const double* g = node.grad.data() + r * 3;
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) gm[i * 3 + j] += x[i] * g[j];
      }
    }
  });
}

}  // namespace bipoint
