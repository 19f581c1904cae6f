#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bipoint/aggregation.hpp"
#include "bipoint/data.hpp"
#include "bipoint/model.hpp"

namespace bipoint {

// The seven ablation configurations.
enum class Method { FullPrecision, Bnn, BnnLsr, BnnEmaAvg, BnnEmaMax, OursAvg, OursMax };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);
std::vector<Method> all_methods();
/// Bit-width column ("32/32" or "1/1").
std::string_view bit_width(Method m);

struct RunConfig {
  ModelSpec model;
  DeltaSolver delta_solver = DeltaSolver::ClosedForm;

  std::vector<ShapeKind> classes{ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus};
  std::size_t per_class = 100;
  double noise = 0.01;
  std::string train_manifest;  // when set, replaces the synthetic dataset
  std::string test_manifest;

  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 0.001;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::size_t report_every = 1;
  std::size_t probe_size = 32;
  bool divergence_guard = true;

  /// Syncs derived fields: aggregation n / offset from n_points, class count.
  void resolve();
  /// ConfigError on invalid values.
  void validate() const;
};

/// Sets binarization / scale / aggregation for one of the ablation methods.
void apply_method(RunConfig& cfg, Method m);

/// INI text with [model], [data] and [train] sections. Parse problems raise
/// ParseError (with the line), unknown keys or bad values ConfigError.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
std::string to_ini(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace bipoint
