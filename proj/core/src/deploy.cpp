#include "bipoint/deploy.hpp"

#include <algorithm>
#include <cmath>

#include "bipoint/error.hpp"

namespace bipoint {

namespace {

struct Rounder {
  bool f32;
  double operator()(double v) const { return f32 ? static_cast<double>(static_cast<float>(v)) : v; }
  std::vector<double> operator()(std::span<const double> v) const {
    std::vector<double> out(v.begin(), v.end());
    for (auto& x : out) x = (*this)(x);
    return out;
  }
};

// Per-channel batch-norm affine as y = x * s + t.
void bn_affine(const Block& b, std::vector<double>& s, std::vector<double>& t) {
  const std::size_t c = b.out_features();
  s.resize(c);
  t.resize(c);
  const auto g = b.gamma.values();
  const auto be = b.beta.values();
  for (std::size_t j = 0; j < c; ++j) {
    s[j] = g[j] / std::sqrt(b.stats.running_var[j] + b.stats.eps);
    t[j] = be[j] - b.stats.running_mean[j] * s[j];
  }
}

DeployLayer dense_layer(const Block& b, const Rounder& round) {
  DeployLayer d;
  d.name = b.name;
  d.in = b.in_features();
  d.out = b.out_features();
  d.act = b.act;
  std::vector<double> w(b.weight.values().begin(), b.weight.values().end());
  std::vector<double> bias(d.out, 0.0);
  if (b.bias.defined()) std::copy(b.bias.values().begin(), b.bias.values().end(), bias.begin());
  if (b.has_bn) {
    std::vector<double> s, t;
    bn_affine(b, s, t);
    for (std::size_t i = 0; i < d.in; ++i)
      for (std::size_t j = 0; j < d.out; ++j) w[i * d.out + j] *= s[j];
    for (std::size_t j = 0; j < d.out; ++j) bias[j] = bias[j] * s[j] + t[j];
  }
  d.weight = Tensor::from_values({d.in, d.out}, round(w));
  if (b.bias.defined() || b.has_bn) d.bias = round(bias);
  return d;
}

// Packs a layer. A dense layer binarized after training gets alpha = mean|W|.
DeployLayer binary_layer(const Block& b, const Rounder& round) {
  DeployLayer d;
  d.name = b.name;
  d.binary = true;
  d.in = b.in_features();
  d.out = b.out_features();
  d.act = b.act;
  double alpha;
  std::vector<double> bias;
  if (b.binary) {
    d.packed_wt = transpose(BitMatrix::pack_signs(b.bi.latent_weight().values(), d.in, d.out));
    alpha = b.bi.alpha_value();
  } else {
    const auto w = b.weight.values();
    d.packed_wt = transpose(BitMatrix::pack_signs(w, d.in, d.out));
    double total = 0.0;
    for (double v : w) total += std::abs(v);
    alpha = total / static_cast<double>(w.size());
    if (b.bias.defined()) bias.assign(b.bias.values().begin(), b.bias.values().end());
  }
  if (b.has_bn) {
    std::vector<double> s, t;
    bn_affine(b, s, t);
    d.scale.resize(d.out);
    d.shift.resize(d.out);
    for (std::size_t j = 0; j < d.out; ++j) {
      d.scale[j] = round(alpha * s[j]);
      d.shift[j] = round((bias.empty() ? t[j] : bias[j] * s[j] + t[j]));
    }
  } else {
    d.has_alpha = true;
    d.alpha = round(alpha);
    d.bias = round(bias);
  }
  return d;
}

Tensor layer_forward(const DeployLayer& l, const Tensor& x) {
  const std::size_t n = x.shape()[0];
  std::vector<double> y;
  if (l.binary) {
    const IntMatrix ints = xnor_gemm(BitMatrix::pack_signs(x.values(), n, l.in), l.packed_wt);
    y.resize(ints.values.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(ints.values[i]);
    if (l.has_alpha)
      for (auto& v : y) v *= l.alpha;
  } else {
    const Tensor z = matmul(x, l.weight);
    y.assign(z.values().begin(), z.values().end());
  }
  if (!l.scale.empty())
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < l.out; ++j) y[r * l.out + j] = y[r * l.out + j] * l.scale[j] + l.shift[j];
  if (!l.bias.empty())
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < l.out; ++j) y[r * l.out + j] += l.bias[j];
  switch (l.act) {
    case Activation::None: break;
    case Activation::ReLU:
      for (auto& v : y) v = std::max(v, 0.0);
      break;
    case Activation::HardTanh:
      for (auto& v : y) v = std::clamp(v, -1.0, 1.0);
      break;
  }
  return Tensor::from_values({n, l.out}, std::move(y));
}

Tensor run_chain(const std::vector<DeployLayer>& chain, Tensor x) {
  for (const auto& l : chain) x = layer_forward(l, x);
  return x;
}

// Drops what a sign consumer cannot see: hardtanh always, alpha in variant f.
// Returns the alpha removed from the chain's final layer (1 when none).
double strip_for_sign_consumers(std::vector<DeployLayer>& chain, bool next_chain_binary, bool drop_alpha) {
  double removed = 1.0;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const bool consumer_binary = i + 1 < chain.size() ? chain[i + 1].binary : next_chain_binary;
    if (!consumer_binary) continue;
    auto& l = chain[i];
    if (l.act == Activation::HardTanh) l.act = Activation::None;
    if (drop_alpha && l.binary && l.has_alpha && l.bias.empty()) {
      if (i + 1 == chain.size()) removed = l.alpha;
      l.alpha = 1.0;
      l.has_alpha = false;
    }
  }
  return removed;
}

}  // namespace

std::string_view to_string(DeployVariant v) {
  static constexpr std::string_view names[] = {"a", "b", "c", "d", "e", "f"};
  return names[static_cast<int>(v)];
}

DeployVariant parse_variant(std::string_view text) {
  if (text.size() == 1 && text[0] >= 'a' && text[0] <= 'f') return static_cast<DeployVariant>(text[0] - 'a');
  throw ConfigError("unknown deployment variant '" + std::string(text) + "' (expected a-f)");
}

std::size_t DeployLayer::binary_bits() const { return binary ? in * out : 0; }

std::size_t DeployLayer::float_params() const {
  return (binary ? 0 : in * out) + bias.size() + scale.size() + shift.size() + (has_alpha ? 1 : 0);
}

std::vector<const DeployLayer*> DeployModel::layers() const {
  std::vector<const DeployLayer*> all;
  for (const auto* chain : {&tnet_point, &tnet_head, &point, &head})
    for (const auto& l : *chain) all.push_back(&l);
  return all;
}

Tensor DeployModel::forward(const Tensor& points, std::size_t batch) const {
  NoGradGuard no_grad;
  if (points.rank() != 2 || points.shape()[1] != 3 || batch == 0 || points.shape()[0] % batch != 0)
    throw DimensionError("deploy: expected [B*n x 3] points for " + std::to_string(batch) + " clouds, got " +
                         shape_string(points.shape()));
  const PoolKind pool = spec.aggregation.pool_kind();
  Tensor x = points;
  if (!tnet_point.empty()) {
    Tensor h = run_chain(tnet_point, points);
    if (tnet_delta != 0.0) h = shift(h, -tnet_delta);
    h = run_chain(tnet_head, pool_groups(h, batch, pool));
    std::vector<double> t(h.values().begin(), h.values().end());
    for (std::size_t b = 0; b < batch; ++b) t[b * 9] += 1.0, t[b * 9 + 4] += 1.0, t[b * 9 + 8] += 1.0;
    x = apply_point_transform(points, Tensor::from_values({batch, 9}, std::move(t)));
  }
  x = run_chain(point, x);
  if (delta != 0.0) x = shift(x, -delta);
  return run_chain(head, pool_groups(x, batch, pool));
}

std::vector<std::size_t> DeployModel::predict(const Tensor& points, std::size_t batch) const {
  const Tensor logits = forward(points, batch);
  const std::size_t k = logits.shape()[1];
  std::vector<std::size_t> out(batch);
  const auto v = logits.values();
  for (std::size_t b = 0; b < batch; ++b)
    out[b] = static_cast<std::size_t>(std::max_element(v.begin() + b * k, v.begin() + (b + 1) * k) - (v.begin() + b * k));
  return out;
}

DeployModel apply_deployment(const Model& model, DeployVariant variant, const DeployOptions& opts) {
  const ModelSpec& spec = model.spec();
  const bool bn_kept = spec.bn_mode == BnMode::Kept;
  const std::string v(to_string(variant));
  if (variant == DeployVariant::A) {
    if (spec.binarized) throw ConfigError("variant a expects a full-precision model");
    if (!bn_kept) throw ConfigError("variant a folds batch norm; the model has none");
  } else if (variant == DeployVariant::F) {
    if (!spec.binarized || spec.bn_mode != BnMode::Dropped)
      throw ConfigError("variant f expects a binarized model trained without batch norm");
  } else {
    if (!spec.binarized) throw ConfigError("variant " + v + " expects a binarized model");
    if (!bn_kept) throw ConfigError("variant " + v + " keeps batch norm; the model was trained without it");
  }
  if (!model.calibrated()) throw StateError("deploy: model has uninitialized scales");

  const Rounder round{opts.round_to_f32};
  const bool bin_first = variant == DeployVariant::D || variant == DeployVariant::E;
  const bool bin_last = variant == DeployVariant::C || variant == DeployVariant::E;

  DeployModel d;
  d.variant = variant;
  d.spec = spec;
  if (bn_kept) d.spec.bn_mode = BnMode::Merged;
  auto convert = [&](const std::vector<Block>& blocks, bool first_chain, bool classifier_head) {
    std::vector<DeployLayer> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Block& b = blocks[i];
      const bool force = (first_chain && i == 0 && bin_first) || (classifier_head && i + 1 == blocks.size() && bin_last);
      out.push_back(b.binary || force ? binary_layer(b, round) : dense_layer(b, round));
    }
    return out;
  };
  d.tnet_point = convert(model.tnet_point(), true, false);
  d.tnet_head = convert(model.tnet_head(), false, false);
  d.point = convert(model.point(), true, false);
  d.head = convert(model.head(), false, true);

  const bool drop_alpha = variant == DeployVariant::F;
  const double tnet_alpha = d.tnet_point.empty()
                                ? 1.0
                                : strip_for_sign_consumers(d.tnet_point, d.tnet_head.front().binary, drop_alpha);
  strip_for_sign_consumers(d.tnet_head, false, drop_alpha);
  const double point_alpha = strip_for_sign_consumers(d.point, d.head.front().binary, drop_alpha);
  strip_for_sign_consumers(d.head, false, drop_alpha);

  // max(alpha * z) - delta has the sign of max(z) - delta / alpha.
  const double delta = spec.aggregation.delta;
  d.tnet_delta = delta / tnet_alpha;
  d.delta = delta / point_alpha;
  return d;
}

double StorageReport::total_mb() const { return static_cast<double>(total_bytes) / (1024.0 * 1024.0); }
double StorageReport::ratio() const {
  return total_bytes ? static_cast<double>(baseline_bytes) / static_cast<double>(total_bytes) : 0.0;
}

StorageReport storage_report(const DeployModel& model) {
  StorageReport r;
  r.variant = model.variant;
  r.header_bytes = kStorageHeaderBytes;
  std::size_t bits = 0;
  for (const DeployLayer* l : model.layers()) {
    r.components.push_back({l->name, l->binary_bits(), l->float_params()});
    bits += l->binary_bits() + 32 * l->float_params();
  }
  r.total_bytes = r.header_bytes + (bits + 7) / 8;
  r.baseline_bytes = full_precision_bytes(model.spec);
  return r;
}

std::size_t full_precision_bytes(const ModelSpec& spec) {
  std::size_t floats = 0;
  auto chain = [&floats](const std::vector<std::size_t>& w) {
    for (std::size_t i = 0; i + 1 < w.size(); ++i) floats += w[i] * w[i + 1] + w[i + 1];
  };
  chain(spec.point_widths);
  auto head = spec.head_widths;
  head.push_back(spec.num_classes);
  chain(head);
  if (spec.use_tnet) {
    chain(spec.tnet_point_widths);
    auto th = spec.tnet_head_widths;
    th.push_back(9);
    chain(th);
  }
  return kStorageHeaderBytes + 4 * floats;
}

}  // namespace bipoint
