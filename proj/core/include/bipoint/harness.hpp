#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bipoint/config.hpp"
#include "bipoint/data.hpp"
#include "bipoint/deploy.hpp"
#include "bipoint/model.hpp"

namespace bipoint {

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_oa = 0.0;
  double test_oa = 0.0;
  double entropy = 0.0;          // mean pooled-feature sign entropy on the probe batch (bits)
  double homogenization = 0.0;   // pairwise sign agreement of pooled features on the probe batch
  double saturation = 0.0;       // share of sign inputs outside (-1, 1); NaN without binarized layers
  double reg_loss = 0.0;         // mean orthogonality penalty on the probe batch; NaN without a T-Net
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> log;
  double test_oa = 0.0;
};

struct TrainOptions {
  std::ostream* progress = nullptr;  // per-epoch human-readable lines
  bool write_outputs = false;        // metrics.csv, model.bpnt, config.ini under cfg.output_dir
};

/// Builds the dataset described by cfg (synthetic or manifests).
Dataset load_dataset(const RunConfig& cfg);

/// Scale calibration once, then Adam with a cosine schedule. DivergenceError
/// (with the per-layer scales in the message) on a non-finite loss, or when
/// the pooled entropy of an EMA model stays below 0.05 bits for 5 epochs.
TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& opts = {});
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

std::string metrics_csv(std::span<const EpochMetrics> log);

struct EvalResult {
  double oa = 0.0;
  std::vector<double> per_class;  // NaN for classes absent from the data
  std::vector<std::size_t> predictions;
};

/// Overall and per-class accuracy of a prediction list. ConfigError when a
/// label or prediction is outside [0, num_classes).
EvalResult score_predictions(std::span<const std::size_t> predictions, std::span<const PointCloud> clouds,
                             std::size_t num_classes);
/// Eval-mode (running statistics) pass.
EvalResult evaluate(Model& model, std::span<const PointCloud> clouds, std::size_t batch_size = 16);
EvalResult evaluate(const DeployModel& model, std::span<const PointCloud> clouds, std::size_t batch_size = 16);

struct AblationRow {
  Method method = Method::FullPrecision;
  std::vector<double> oa;  // one per seed
  double mean_oa() const;
};

/// Trains every method on every seed over the same data.
std::vector<AblationRow> ablate(const RunConfig& base, std::span<const std::uint64_t> seeds,
                                std::ostream* progress = nullptr);
std::string ablation_csv(std::span<const AblationRow> rows);

struct BenchRow {
  std::size_t n = 0, m = 0, k = 0;
  double xnor_ms = 0.0;
  double naive_ms = 0.0;
  double blocked_ms = 0.0;
  std::size_t packed_bits = 0;    // information bits of both operands
  std::size_t float_bits = 0;     // same operands as float32
  std::size_t packed_bytes = 0;   // actual BitMatrix storage (rows padded to 64 bits)
  std::size_t float_bytes = 0;
  bool verified = false;          // xnor result == float GEMM result
  double speedup_naive() const { return naive_ms / xnor_ms; }
  double speedup_blocked() const { return blocked_ms / xnor_ms; }
};

/// Unoptimized i-j-k float32 GEMM, [n x m] . [m x k].
void naive_gemm_f32(const float* a, const float* b, float* c, std::size_t n, std::size_t m, std::size_t k);
/// Cache-blocked i-k-j float32 GEMM.
void blocked_gemm_f32(const float* a, const float* b, float* c, std::size_t n, std::size_t m, std::size_t k);

/// Median-of-repeats timings of xnor_gemm vs both float GEMMs on random +-1
/// operands (one warm-up run each, single thread).
BenchRow bench_gemm(std::size_t n, std::size_t m, std::size_t k, std::size_t repeats, std::uint64_t seed);
std::string bench_csv(std::span<const BenchRow> rows);

}  // namespace bipoint
