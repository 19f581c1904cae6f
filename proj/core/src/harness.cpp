#include "bipoint/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "bipoint/checkpoint.hpp"
#include "bipoint/entropy.hpp"
#include "bipoint/error.hpp"
#include "bipoint/rng.hpp"

namespace bipoint {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t b = logits.shape()[0], k = logits.shape()[1];
  const auto v = logits.values();
  std::vector<std::size_t> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto first = v.begin() + static_cast<std::ptrdiff_t>(i * k);
    out[i] = static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(k)) - first);
  }
  return out;
}

std::string scale_dump(const Model& model) {
  std::ostringstream out;
  for (const Block* b : model.blocks()) {
    if (b->binary) out << "\n  " << b->name << ": alpha=" << b->bi.alpha_value();
  }
  return out.str();
}

struct ProbeStats {
  double entropy = kNaN, homogenization = kNaN, saturation = kNaN, reg = kNaN;
};

ProbeStats probe(Model& model, const Tensor& points, std::size_t batch) {
  NoGradGuard no_grad;
  ForwardOptions opts;
  opts.record_sign_inputs = true;
  const ForwardResult out = model.forward(points, batch, Mode::Eval, opts);
  ProbeStats s;
  s.entropy = measure_feature_entropy(out.pooled).mean_entropy;
  s.homogenization = homogenization_score(out.pooled);
  if (!out.sign_inputs.empty()) {
    std::size_t sat = 0, total = 0;
    for (const Tensor& t : out.sign_inputs) {
      sat += static_cast<std::size_t>(std::llround(ste_saturation_ratio(t) * static_cast<double>(t.numel())));
      total += t.numel();
    }
    s.saturation = static_cast<double>(sat) / static_cast<double>(total);
  }
  if (out.reg_loss.defined()) s.reg = out.reg_loss.item();
  return s;
}

template <typename Forward>
EvalResult evaluate_batched(std::span<const PointCloud> clouds, std::size_t batch_size, std::size_t num_classes,
                            Forward&& forward) {
  if (clouds.empty()) throw EmptyInputError("evaluate: empty dataset");
  if (batch_size == 0) batch_size = 1;
  std::vector<std::size_t> preds;
  preds.reserve(clouds.size());
  for (std::size_t start = 0; start < clouds.size(); start += batch_size) {
    const std::size_t end = std::min(clouds.size(), start + batch_size);
    const Tensor pts = stack_points(clouds.subspan(start, end - start));
    const auto p = forward(pts, end - start);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return score_predictions(preds, clouds, num_classes);
}

}  // namespace

Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.train_manifest.empty()) {
    Dataset ds;
    ds.train = load_manifest(cfg.train_manifest, cfg.model.n_points, derive_seed(cfg.seed, 11));
    ds.test = load_manifest(cfg.test_manifest, cfg.model.n_points, derive_seed(cfg.seed, 12));
    ds.num_classes = cfg.model.num_classes;
    return ds;
  }
  ShapeOptions opts;
  opts.noise_sigma = cfg.noise;
  return make_dataset(cfg.classes, cfg.per_class, cfg.model.n_points, derive_seed(cfg.seed, 10), opts);
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) { return train(cfg, load_dataset(cfg), opts); }

TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  cfg.validate();
  if (data.train.size() < 2) throw EmptyInputError("train: need at least two training clouds");
  for (const auto* split : {&data.train, &data.test})
    for (const auto& c : *split) {
      if (c.label >= cfg.model.num_classes)
        throw ConfigError("train: label " + std::to_string(c.label) + " outside the model's " +
                          std::to_string(cfg.model.num_classes) + " classes");
      if (c.size() != data.train.front().size()) throw DimensionError("train: clouds differ in point count");
    }

  TrainResult result{Model::build(cfg.model, derive_seed(cfg.seed, 1)), {}, 0.0};
  Model& model = result.model;
  const std::size_t batch_size = std::min(cfg.batch_size, data.train.size());

  Xoshiro256 order_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto gather = [&](std::size_t start, std::size_t end, std::vector<std::size_t>& labels) {
    std::vector<const PointCloud*> batch;
    labels.clear();
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&data.train[order[i]]);
      labels.push_back(data.train[order[i]].label);
    }
    return stack_points(std::span<const PointCloud* const>(batch));
  };

  {
    order_rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> labels;
    model.lsr_calibrate(gather(0, batch_size, labels), batch_size);
  }

  const auto& probe_src = data.test.size() >= 2 ? data.test : data.train;
  const std::size_t probe_n = std::min(cfg.probe_size, probe_src.size());
  const Tensor probe_points = stack_points(std::span<const PointCloud>(probe_src).subspan(0, probe_n));

  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  const bool ema = cfg.model.aggregation.kind == AggregationKind::EmaMax ||
                   cfg.model.aggregation.kind == AggregationKind::EmaAvg;
  std::size_t low_entropy_streak = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    std::vector<std::size_t> labels;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      // A lone trailing cloud cannot be batch-normalized.
      if (end - start < 2) continue;
      const Tensor pts = gather(start, end, labels);
      const ForwardResult out = model.forward(pts, end - start, Mode::Train);
      const Tensor loss = model.loss(out, labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + "; layer scales:" +
                              scale_dump(model));
      }
      for (auto& p : params) p.zero_grad();
      backward(loss);
      adam_step(params, adam, lr);
      model.clip_latent();
      loss_sum += lv * static_cast<double>(end - start);
      seen += end - start;
      const auto pred = argmax_rows(out.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.loss = seen ? loss_sum / static_cast<double>(seen) : kNaN;
    m.train_oa = seen ? static_cast<double>(correct) / static_cast<double>(seen) : kNaN;
    m.test_oa = data.test.empty() ? kNaN : evaluate(model, data.test, batch_size).oa;
    const ProbeStats ps = probe(model, probe_points, probe_n);
    m.entropy = ps.entropy;
    m.homogenization = ps.homogenization;
    m.saturation = ps.saturation;
    m.reg_loss = ps.reg;
    result.log.push_back(m);

    if (opts.progress && (m.epoch % cfg.report_every == 0 || m.epoch == cfg.epochs)) {
      *opts.progress << "epoch " << m.epoch << "/" << cfg.epochs << "  loss " << m.loss << "  train " << m.train_oa
                     << "  test " << m.test_oa << "  H " << m.entropy << "  sat " << m.saturation;
      if (!std::isnan(m.reg_loss)) *opts.progress << "  Lreg " << m.reg_loss;
      *opts.progress << "\n";
    }

    if (cfg.divergence_guard && ema) {
      low_entropy_streak = m.entropy < 0.05 ? low_entropy_streak + 1 : 0;
      if (low_entropy_streak >= 5)
        throw DivergenceError("pooled feature entropy below 0.05 bits for 5 epochs under " +
                              std::string(to_string(cfg.model.aggregation.kind)) + "; layer scales:" +
                              scale_dump(model));
    }
  }
  result.test_oa = result.log.empty() ? kNaN : result.log.back().test_oa;

  if (opts.write_outputs) {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "metrics.csv") << metrics_csv(result.log);
    save_checkpoint(model, dir / "model.bpnt");
    save_config(cfg, dir / "config.ini");
  }
  return result;
}

std::string metrics_csv(std::span<const EpochMetrics> log) {
  std::ostringstream out;
  out << "epoch,lr,loss,train_oa,test_oa,entropy_bits,homogenization,saturation,reg_loss\n";
  for (const auto& m : log)
    out << m.epoch << ',' << num(m.lr) << ',' << num(m.loss) << ',' << num(m.train_oa) << ',' << num(m.test_oa)
        << ',' << num(m.entropy) << ',' << num(m.homogenization) << ',' << num(m.saturation) << ','
        << num(m.reg_loss) << '\n';
  return out.str();
}

EvalResult score_predictions(std::span<const std::size_t> predictions, std::span<const PointCloud> clouds,
                             std::size_t num_classes) {
  if (predictions.size() != clouds.size()) throw DimensionError("score: prediction count differs from data");
  if (clouds.empty()) throw EmptyInputError("score: empty dataset");
  EvalResult r;
  r.predictions.assign(predictions.begin(), predictions.end());
  std::vector<std::size_t> hits(num_classes, 0), count(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const std::size_t y = clouds[i].label;
    if (y >= num_classes || predictions[i] >= num_classes)
      throw ConfigError("evaluate: label " + std::to_string(y) + " does not fit a " + std::to_string(num_classes) +
                        "-class model");
    ++count[y];
    if (predictions[i] == y) {
      ++hits[y];
      ++correct;
    }
  }
  r.oa = static_cast<double>(correct) / static_cast<double>(clouds.size());
  for (std::size_t c = 0; c < num_classes; ++c)
    r.per_class.push_back(count[c] ? static_cast<double>(hits[c]) / static_cast<double>(count[c]) : kNaN);
  return r;
}

EvalResult evaluate(Model& model, std::span<const PointCloud> clouds, std::size_t batch_size) {
  NoGradGuard no_grad;
  return evaluate_batched(clouds, batch_size, model.spec().num_classes, [&](const Tensor& pts, std::size_t b) {
    return argmax_rows(model.forward(pts, b, Mode::Eval).logits);
  });
}

EvalResult evaluate(const DeployModel& model, std::span<const PointCloud> clouds, std::size_t batch_size) {
  return evaluate_batched(clouds, batch_size, model.spec.num_classes,
                          [&](const Tensor& pts, std::size_t b) { return model.predict(pts, b); });
}

double AblationRow::mean_oa() const {
  if (oa.empty()) return kNaN;
  return std::accumulate(oa.begin(), oa.end(), 0.0) / static_cast<double>(oa.size());
}

std::vector<AblationRow> ablate(const RunConfig& base, std::span<const std::uint64_t> seeds, std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (Method m : all_methods()) rows.push_back(AblationRow{m, {}});
  for (std::uint64_t seed : seeds) {
    RunConfig seeded = base;
    seeded.seed = seed;
    const Dataset data = load_dataset(seeded);
    for (auto& row : rows) {
      RunConfig cfg = seeded;
      apply_method(cfg, row.method);
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = train(cfg, data);
      row.oa.push_back(r.test_oa);
      if (progress) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        *progress << "seed " << seed << "  " << to_string(row.method) << "  OA " << r.test_oa << "  (" << secs
                  << " s)\n";
      }
    }
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  std::size_t seeds = rows.empty() ? 0 : rows.front().oa.size();
  out << "method,bit_width,aggregation";
  for (std::size_t s = 0; s < seeds; ++s) out << ",oa_seed" << s;
  out << ",oa\n";
  for (const auto& r : rows) {
    RunConfig probe;
    apply_method(probe, r.method);
    out << to_string(r.method) << ',' << bit_width(r.method) << ',' << to_string(probe.model.aggregation.kind);
    for (double v : r.oa) out << ',' << num(v);
    out << ',' << num(r.mean_oa()) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

void naive_gemm_f32(const float* a, const float* b, float* c, std::size_t n, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      float s = 0.0f;
      for (std::size_t p = 0; p < m; ++p) s += a[i * m + p] * b[p * k + j];
      c[i * k + j] = s;
    }
}

void blocked_gemm_f32(const float* a, const float* b, float* c, std::size_t n, std::size_t m, std::size_t k) {
  constexpr std::size_t kBlock = 64;
  std::fill(c, c + n * k, 0.0f);
  for (std::size_t i0 = 0; i0 < n; i0 += kBlock)
    for (std::size_t p0 = 0; p0 < m; p0 += kBlock)
      for (std::size_t j0 = 0; j0 < k; j0 += kBlock) {
        const std::size_t i1 = std::min(n, i0 + kBlock), p1 = std::min(m, p0 + kBlock), j1 = std::min(k, j0 + kBlock);
        for (std::size_t i = i0; i < i1; ++i)
          for (std::size_t p = p0; p < p1; ++p) {
            const float av = a[i * m + p];
            const float* brow = b + p * k;
            float* crow = c + i * k;
            for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
          }
      }
}

BenchRow bench_gemm(std::size_t n, std::size_t m, std::size_t k, std::size_t repeats, std::uint64_t seed) {
  if (n == 0 || m == 0 || k == 0) throw DimensionError("bench: zero dimension");
  repeats = std::max<std::size_t>(repeats, 1);
  Xoshiro256 rng(seed);
  std::vector<double> a(n * m), w(m * k);
  for (auto& v : a) v = rng.coin() ? 1.0 : -1.0;
  for (auto& v : w) v = rng.coin() ? 1.0 : -1.0;
  std::vector<float> af(a.begin(), a.end()), wf(w.begin(), w.end()), c(n * k);
  const BitMatrix ap = BitMatrix::pack(a, n, m);
  const BitMatrix wt = transpose(BitMatrix::pack(w, m, k));

  using clock = std::chrono::steady_clock;
  auto time_ms = [repeats](auto&& fn) {
    fn();  // warm-up
    std::vector<double> t;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = clock::now();
      fn();
      t.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
    return t[t.size() / 2];
  };

  BenchRow row;
  row.n = n;
  row.m = m;
  row.k = k;
  IntMatrix ints;
  row.xnor_ms = time_ms([&] { ints = xnor_gemm(ap, wt); });
  row.blocked_ms = time_ms([&] { blocked_gemm_f32(af.data(), wf.data(), c.data(), n, m, k); });
  row.naive_ms = time_ms([&] { naive_gemm_f32(af.data(), wf.data(), c.data(), n, m, k); });
  row.verified = true;
  for (std::size_t i = 0; i < n * k; ++i) row.verified = row.verified && static_cast<float>(ints.values[i]) == c[i];
  row.packed_bits = n * m + m * k;
  row.float_bits = 32 * (n * m + m * k);
  row.packed_bytes = ap.byte_size() + wt.byte_size();
  row.float_bytes = sizeof(float) * (af.size() + wf.size());
  return row;
}

std::string bench_csv(std::span<const BenchRow> rows) {
  std::ostringstream out;
  out << "n,m,k,xnor_ms,naive_f32_ms,blocked_f32_ms,speedup_vs_naive,speedup_vs_blocked,packed_bytes,float_bytes,"
         "memory_ratio,verified\n";
  for (const auto& r : rows)
    out << r.n << ',' << r.m << ',' << r.k << ',' << num(r.xnor_ms) << ',' << num(r.naive_ms) << ','
        << num(r.blocked_ms) << ',' << num(r.speedup_naive()) << ',' << num(r.speedup_blocked()) << ','
        << r.packed_bytes << ',' << r.float_bytes << ','
        << num(static_cast<double>(r.packed_bits) / static_cast<double>(r.float_bits)) << ','
        << (r.verified ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace bipoint
