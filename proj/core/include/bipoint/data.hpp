#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bipoint/tensor.hpp"

namespace bipoint {

struct PointCloud {
  std::vector<double> xyz;  // row-major [n x 3]
  std::size_t label = 0;
  // Normalization applied so far: p_normalized = (p_raw - center) / scale.
  std::array<double, 3> center{0.0, 0.0, 0.0};
  double scale = 1.0;

  std::size_t size() const { return xyz.size() / 3; }
};

enum class ShapeKind { Sphere, Cube, Cylinder, Torus, Cone };

std::string_view to_string(ShapeKind kind);
/// ConfigError for an unknown name.
ShapeKind parse_shape(std::string_view name);
std::vector<ShapeKind> all_shapes();

struct ShapeOptions {
  double noise_sigma = 0.01;
  bool rotate = true;  // random rotation about the up (z) axis
};

/// Uniform surface sample of a primitive, jittered, rotated, normalized.
/// Centrally symmetric shapes are sampled in antipodal pairs (plus a zero-sum
/// triple on the sphere when n is odd) so their noise-free centroid is exactly 0.
PointCloud generate_shape(ShapeKind kind, std::size_t n, std::uint64_t seed, const ShapeOptions& opts = {});

/// Centers on the centroid and scales the farthest point to norm 1.
void normalize(PointCloud& cloud);

/// Whitespace-separated "x y z" per line; blank lines and '#' comments skipped.
PointCloud load_xyz(const std::filesystem::path& path);
/// OFF mesh. With n_points > 0 and faces present, n points are sampled
/// area-weighted over the (fan-triangulated) faces; otherwise the vertices are used.
PointCloud load_off(const std::filesystem::path& path, std::size_t n_points, std::uint64_t seed);
/// Dispatches on the extension (.xyz / .off).
PointCloud load_cloud(const std::filesystem::path& path, std::size_t n_points, std::uint64_t seed);

struct Dataset {
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
  std::size_t num_classes = 0;
};

/// per_class clouds per shape with per-sample derived seeds; the first 80% of
/// each class (rounded down) goes to train, the rest to test.
Dataset make_dataset(std::span<const ShapeKind> classes, std::size_t per_class, std::size_t n_points,
                     std::uint64_t seed, const ShapeOptions& opts = {});

/// "path,label" per line; relative paths resolve against the manifest's directory.
std::vector<PointCloud> load_manifest(const std::filesystem::path& manifest, std::size_t n_points,
                                      std::uint64_t seed);
/// Writes every cloud as <dir>/<prefix>_<i>.xyz and returns the manifest path.
std::filesystem::path write_manifest(std::span<const PointCloud> clouds, const std::filesystem::path& dir,
                                     const std::string& prefix);

/// Stacks equally sized clouds into a [B*n x 3] tensor.
Tensor stack_points(std::span<const PointCloud* const> clouds);
Tensor stack_points(std::span<const PointCloud> clouds);

}  // namespace bipoint
