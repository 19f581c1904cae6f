#include "bipoint/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bipoint/error.hpp"

namespace bipoint {

namespace {

constexpr char kMagic[4] = {'B', 'P', 'N', 'T'};
constexpr std::uint8_t kNoVariant = 0xFF;

enum LayerFlag : std::uint8_t {
  kHasBias = 1,
  kHasBn = 2,
  kLearnable = 4,
  kHasAlpha = 8,
  kHasAffine = 16,
};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void size(std::size_t v) {
    if (v > 0xFFFFFFFFu) throw EncodingError("checkpoint: dimension exceeds u32");
    u32(static_cast<std::uint32_t>(v));
  }
  void widths(const std::vector<std::size_t>& w) {
    size(w.size());
    for (auto v : w) size(v);
  }
  void reals(std::span<const double> v, bool wide) {
    for (double x : v) wide ? f64(x) : f32(x);
  }
  void name(const std::string& s) {
    if (s.size() > 0xFFFF) throw EncodingError("checkpoint: layer name too long");
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<std::size_t> widths() {
    const std::size_t n = u32();
    if (n > 4096) fail("implausible width count");
    std::vector<std::size_t> w(n);
    for (auto& v : w) v = u32();
    return w;
  }
  std::vector<double> reals(std::size_t n, bool wide) {
    need(n * (wide ? 8 : 4));
    std::vector<double> v(n);
    for (auto& x : v) x = wide ? f64() : f32();
    return v;
  }
  std::string name() {
    const std::size_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated (need " + std::to_string(n) + " more bytes)");
  }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw EncodingError("checkpoint: " + what + " at byte " + std::to_string(pos_));
  }

 private:
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_header(Writer& w, CheckpointKind kind, std::uint8_t variant, const ModelSpec& s) {
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(variant);
  w.widths(s.point_widths);
  w.widths(s.head_widths);
  w.widths(s.tnet_point_widths);
  w.widths(s.tnet_head_widths);
  w.size(s.num_classes);
  w.size(s.n_points);
  w.u8(static_cast<std::uint8_t>(s.binarized | s.first_layer_fp << 1 | s.last_layer_fp << 2 | s.lsr << 3 |
                                 s.use_tnet << 4));
  w.u8(static_cast<std::uint8_t>(s.bn_mode));
  w.u8(static_cast<std::uint8_t>(s.aggregation.kind));
  w.size(s.aggregation.n);
  w.f64(s.aggregation.delta);
  w.u64(s.aggregation.mc_samples);
  w.u64(s.aggregation.seed);
  w.f64(s.reg_weight);
  w.f64(s.bn_eps);
  w.f64(s.bn_momentum);
}

ModelSpec read_spec(Reader& r) {
  ModelSpec s;
  s.point_widths = r.widths();
  s.head_widths = r.widths();
  s.tnet_point_widths = r.widths();
  s.tnet_head_widths = r.widths();
  s.num_classes = r.u32();
  s.n_points = r.u32();
  const auto flags = r.u8();
  s.binarized = flags & 1;
  s.first_layer_fp = flags & 2;
  s.last_layer_fp = flags & 4;
  s.lsr = flags & 8;
  s.use_tnet = flags & 16;
  const auto bn = r.u8();
  if (bn > 2) r.fail("unknown bn mode");
  s.bn_mode = static_cast<BnMode>(bn);
  const auto kind = r.u8();
  if (kind > 3) r.fail("unknown aggregation kind");
  s.aggregation.kind = static_cast<AggregationKind>(kind);
  s.aggregation.n = r.u32();
  s.aggregation.delta = r.f64();
  s.aggregation.mc_samples = r.u64();
  s.aggregation.seed = r.u64();
  s.reg_weight = r.f64();
  s.bn_eps = r.f64();
  s.bn_momentum = r.f64();
  return s;
}

void write_layer_head(Writer& w, std::uint8_t chain, bool binary, std::uint8_t flags, Activation act,
                      std::size_t in, std::size_t out, const std::string& name) {
  w.u8(chain);
  w.u8(binary ? 1 : 0);
  w.u8(flags);
  w.u8(static_cast<std::uint8_t>(act));
  w.size(in);
  w.size(out);
  w.name(name);
}

struct LayerHead {
  std::uint8_t chain, tag, flags, act;
  std::size_t in, out;
  std::string name;
};

LayerHead read_layer_head(Reader& r) {
  LayerHead h;
  h.chain = r.u8();
  h.tag = r.u8();
  h.flags = r.u8();
  h.act = r.u8();
  h.in = r.u32();
  h.out = r.u32();
  h.name = r.name();
  if (h.chain > 3 || h.tag > 1 || h.act > 2) r.fail("bad layer record");
  if (h.in == 0 || h.out == 0 || h.in > (1u << 20) || h.out > (1u << 20)) r.fail("bad layer shape");
  return h;
}

Model read_model(Reader& r, const ModelSpec& spec) {
  Model m(spec);
  std::vector<Block>* chains[] = {&m.tnet_point(), &m.tnet_head(), &m.point(), &m.head()};
  const std::size_t count = r.u32();
  for (std::size_t i = 0; i < count; ++i) {
    const LayerHead h = read_layer_head(r);
    Block b;
    b.name = h.name;
    b.binary = h.tag == 1;
    b.act = static_cast<Activation>(h.act);
    if (b.binary) {
      auto latent = Tensor::from_values({h.in, h.out}, r.reals(h.in * h.out, true), true);
      const double alpha = r.f64();
      b.bi = BiLinearLayer::from_parts(std::move(latent), alpha, h.flags & kLearnable);
    } else {
      b.weight = Tensor::from_values({h.in, h.out}, r.reals(h.in * h.out, true), true);
    }
    if (h.flags & kHasBias) b.bias = Tensor::from_values({h.out}, r.reals(h.out, true), true);
    if (h.flags & kHasBn) {
      b.has_bn = true;
      b.gamma = Tensor::from_values({h.out}, r.reals(h.out, true), true);
      b.beta = Tensor::from_values({h.out}, r.reals(h.out, true), true);
      b.stats = BatchNormStats(h.out);
      b.stats.running_mean = r.reals(h.out, true);
      b.stats.running_var = r.reals(h.out, true);
      b.stats.eps = spec.bn_eps;
      b.stats.momentum = spec.bn_momentum;
    }
    chains[h.chain]->push_back(std::move(b));
  }
  return m;
}

DeployModel read_deploy(Reader& r, const ModelSpec& spec, std::uint8_t variant) {
  DeployModel d;
  if (variant > 5) r.fail("unknown deployment variant");
  d.variant = static_cast<DeployVariant>(variant);
  d.spec = spec;
  d.tnet_delta = r.f64();
  d.delta = r.f64();
  std::vector<DeployLayer>* chains[] = {&d.tnet_point, &d.tnet_head, &d.point, &d.head};
  const std::size_t count = r.u32();
  for (std::size_t i = 0; i < count; ++i) {
    const LayerHead h = read_layer_head(r);
    DeployLayer l;
    l.name = h.name;
    l.binary = h.tag == 1;
    l.act = static_cast<Activation>(h.act);
    l.in = h.in;
    l.out = h.out;
    if (l.binary) {
      l.packed_wt = BitMatrix(h.out, h.in);
      auto words = l.packed_wt.mutable_words();
      r.need(words.size() * 8);
      for (auto& word : words) word = r.u64();
      // Padding bits must be zero for the popcount identity to hold.
      const std::size_t tail = h.in % 64;
      if (tail != 0) {
        const std::uint64_t pad_mask = ~((std::uint64_t{1} << tail) - 1);
        for (std::size_t row = 0; row < h.out; ++row)
          if (l.packed_wt.row(row).back() & pad_mask) r.fail("nonzero padding bits in packed weights");
      }
    } else {
      l.weight = Tensor::from_values({h.in, h.out}, r.reals(h.in * h.out, false));
    }
    if (h.flags & kHasAlpha) {
      l.has_alpha = true;
      l.alpha = r.f32();
    }
    if (h.flags & kHasBias) l.bias = r.reals(h.out, false);
    if (h.flags & kHasAffine) {
      l.scale = r.reals(h.out, false);
      l.shift = r.reals(h.out, false);
    }
    chains[h.chain]->push_back(std::move(l));
  }
  return d;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

}  // namespace

std::vector<std::uint8_t> serialize(const Model& model) {
  Writer w;
  write_header(w, CheckpointKind::Train, kNoVariant, model.spec());
  const std::vector<Block>* chains[] = {&model.tnet_point(), &model.tnet_head(), &model.point(), &model.head()};
  w.size(model.blocks().size());
  for (std::uint8_t c = 0; c < 4; ++c) {
    for (const Block& b : *chains[c]) {
      std::uint8_t flags = 0;
      if (b.bias.defined()) flags |= kHasBias;
      if (b.has_bn) flags |= kHasBn;
      if (b.binary && b.bi.learnable_scale()) flags |= kLearnable;
      write_layer_head(w, c, b.binary, flags, b.act, b.in_features(), b.out_features(), b.name);
      if (b.binary) {
        w.reals(b.bi.latent_weight().values(), true);
        w.f64(b.bi.initialized() ? b.bi.alpha_value() : 0.0);
      } else {
        w.reals(b.weight.values(), true);
      }
      if (b.bias.defined()) w.reals(b.bias.values(), true);
      if (b.has_bn) {
        w.reals(b.gamma.values(), true);
        w.reals(b.beta.values(), true);
        w.reals(b.stats.running_mean, true);
        w.reals(b.stats.running_var, true);
      }
    }
  }
  return w.take();
}

std::vector<std::uint8_t> serialize(const DeployModel& model) {
  Writer w;
  write_header(w, CheckpointKind::Deploy, static_cast<std::uint8_t>(model.variant), model.spec);
  w.f64(model.tnet_delta);
  w.f64(model.delta);
  const std::vector<DeployLayer>* chains[] = {&model.tnet_point, &model.tnet_head, &model.point, &model.head};
  w.size(model.layers().size());
  for (std::uint8_t c = 0; c < 4; ++c) {
    for (const DeployLayer& l : *chains[c]) {
      std::uint8_t flags = 0;
      if (l.has_alpha) flags |= kHasAlpha;
      if (!l.bias.empty()) flags |= kHasBias;
      if (!l.scale.empty()) flags |= kHasAffine;
      write_layer_head(w, c, l.binary, flags, l.act, l.in, l.out, l.name);
      if (l.binary) {
        for (auto word : l.packed_wt.words()) w.u64(word);
      } else {
        w.reals(l.weight.values(), false);
      }
      if (l.has_alpha) w.f32(l.alpha);
      if (!l.bias.empty()) w.reals(l.bias, false);
      if (!l.scale.empty()) {
        w.reals(l.scale, false);
        w.reals(l.shift, false);
      }
    }
  }
  return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4);
  for (char c : kMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) r.fail("bad magic (not a checkpoint)");
  const auto version = r.u16();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto kind = r.u8();
  const auto variant = r.u8();
  const ModelSpec spec = read_spec(r);
  Checkpoint out = [&]() -> Checkpoint {
    if (kind == static_cast<std::uint8_t>(CheckpointKind::Train)) return read_model(r, spec);
    if (kind == static_cast<std::uint8_t>(CheckpointKind::Deploy)) return read_deploy(r, spec, variant);
    r.fail("unknown checkpoint kind");
  }();
  if (!r.done()) r.fail("trailing bytes");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EncodingError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) { write_file(path, serialize(model)); }
void save_checkpoint(const DeployModel& model, const std::filesystem::path& path) {
  write_file(path, serialize(model));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

Model load_model(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (auto* m = std::get_if<Model>(&ck)) return std::move(*m);
  throw ConfigError("'" + path.string() + "' is a deployed model, expected a training checkpoint");
}

DeployModel load_deploy(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (auto* d = std::get_if<DeployModel>(&ck)) return std::move(*d);
  throw ConfigError("'" + path.string() + "' is a training checkpoint, expected a deployed model");
}

std::string describe(const Checkpoint& ckpt) {
  std::ostringstream out;
  auto widths = [](const std::vector<std::size_t>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "-" : "") + std::to_string(w[i]);
    return s;
  };
  const ModelSpec& s = std::holds_alternative<Model>(ckpt) ? std::get<Model>(ckpt).spec()
                                                             : std::get<DeployModel>(ckpt).spec;
  out << "kind:        " << (std::holds_alternative<Model>(ckpt) ? "train" : "deploy") << "\n";
  if (auto* d = std::get_if<DeployModel>(&ckpt)) out << "variant:     " << to_string(d->variant) << "\n";
  out << "point mlp:   " << widths(s.point_widths) << "\n"
      << "head:        " << widths(s.head_widths) << "-" << s.num_classes << "\n"
      << "binarized:   " << (s.binarized ? "yes" : "no") << (s.binarized ? (s.lsr ? " (lsr)" : " (fixed scale)") : "")
      << "\n"
      << "bn:          " << to_string(s.bn_mode) << "\n"
      << "aggregation: " << to_string(s.aggregation.kind) << " n=" << s.aggregation.n
      << " delta=" << s.aggregation.delta << "\n"
      << "tnet:        " << (s.use_tnet ? widths(s.tnet_point_widths) + " / " + widths(s.tnet_head_widths) + "-9" : "off")
      << "\n";
  if (auto* m = std::get_if<Model>(&ckpt)) {
    out << "layers:      " << m->blocks().size() << " (" << m->bilinear_count() << " bi-linear, "
        << m->alpha_count() << " learnable scales)\n"
        << "parameters:  " << m->parameter_count() << "\n";
    for (const Block* b : m->blocks()) {
      out << "  " << b->name << "  " << (b->binary ? "bi " : "fp ") << b->in_features() << "x" << b->out_features();
      if (b->binary) out << "  alpha=" << b->bi.alpha_value();
      if (b->has_bn) out << "  bn";
      out << "  " << to_string(b->act) << "\n";
    }
  } else {
    const auto& d = std::get<DeployModel>(ckpt);
    const StorageReport rep = storage_report(d);
    out << "storage:     " << rep.total_bytes << " bytes (" << rep.total_mb() << " MB, " << rep.ratio()
        << "x vs full precision)\n";
    for (const DeployLayer* l : d.layers()) {
      out << "  " << l->name << "  " << (l->binary ? "bi " : "fp ") << l->in << "x" << l->out;
      if (l->has_alpha) out << "  alpha=" << l->alpha;
      if (!l->scale.empty()) out << "  affine";
      out << "  " << to_string(l->act) << "\n";
    }
  }
  return out.str();
}

}  // namespace bipoint
