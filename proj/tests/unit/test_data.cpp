#include <doctest.h>

#include <bipoint/data.hpp>
#include <bipoint/error.hpp>
#include <bipoint/rng.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <set>

using namespace bipoint;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bipoint_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

double norm(const PointCloud& c, std::size_t i) {
  return std::sqrt(c.xyz[3 * i] * c.xyz[3 * i] + c.xyz[3 * i + 1] * c.xyz[3 * i + 1] + c.xyz[3 * i + 2] * c.xyz[3 * i + 2]);
}

void check_normalized(const PointCloud& c) {
  for (std::size_t d = 0; d < 3; ++d) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c.xyz[3 * i + d];
    CHECK(std::abs(s / static_cast<double>(c.size())) < 1e-9);
  }
  double mx = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) mx = std::max(mx, norm(c, i));
  CHECK(std::abs(mx - 1.0) < 1e-9);
}

std::size_t error_line(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("every generator gives a normalized cloud of the requested size") {
  for (ShapeKind k : all_shapes()) {
    for (std::size_t n : {8u, 9u, 17u, 1024u}) {
      const PointCloud c = generate_shape(k, n, 5);
      CHECK(c.size() == n);
      check_normalized(c);
    }
    CHECK(parse_shape(to_string(k)) == k);
    CHECK_THROWS_AS(generate_shape(k, 7, 1), ConfigError);
  }
  CHECK_THROWS_AS(parse_shape("dodecahedron"), ConfigError);
}

TEST_CASE("noise-free sphere lies on the unit sphere") {
  for (std::size_t n : {1024u, 1023u}) {
    const PointCloud c = generate_shape(ShapeKind::Sphere, n, 1, {.noise_sigma = 0.0});
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(norm(c, i) - 1.0) < 1e-9);
  }
}

TEST_CASE("noise-free cube points lie on a face") {
  const PointCloud c = generate_shape(ShapeKind::Cube, 1024, 2, {.noise_sigma = 0.0, .rotate = false});
  double half = 0.0;
  for (double v : c.xyz) half = std::max(half, std::abs(v));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double m = std::max({std::abs(c.xyz[3 * i]), std::abs(c.xyz[3 * i + 1]), std::abs(c.xyz[3 * i + 2])});
    CHECK(std::abs(m - half) < 1e-9);
  }
}

TEST_CASE("generator determinism") {
  for (ShapeKind k : all_shapes()) {
    CHECK(generate_shape(k, 256, 9).xyz == generate_shape(k, 256, 9).xyz);
    CHECK(generate_shape(k, 256, 9).xyz != generate_shape(k, 256, 10).xyz);
  }
}

TEST_CASE("normalization is idempotent") {
  PointCloud c;
  Xoshiro256 rng(3);
  for (int i = 0; i < 300; ++i) c.xyz.push_back(5.0 + 2.0 * rng.normal());
  normalize(c);
  check_normalized(c);
  PointCloud again = c;
  normalize(again);
  for (std::size_t i = 0; i < c.xyz.size(); ++i) CHECK(std::abs(again.xyz[i] - c.xyz[i]) < 1e-12);
  PointCloud one;
  one.xyz = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(normalize(one), DomainError);
}

TEST_CASE("xyz files") {
  const fs::path dir = scratch_dir("xyz");
  const PointCloud c = load_xyz(write_text(dir / "a.xyz", "# header\n0 0 0\n\n1 0 0\n0 2 0\n"));
  CHECK(c.size() == 3);
  check_normalized(c);
  CHECK_THROWS_AS(load_xyz(write_text(dir / "empty.xyz", "")), ParseError);
  CHECK(error_line([&] { load_xyz(write_text(dir / "bad.xyz", "0 0 0\n1 x 0\n")); }) == 2);
  CHECK_THROWS_AS(load_xyz(write_text(dir / "short.xyz", "0 0 0\n1 0\n")), ParseError);
  CHECK_THROWS_AS(load_xyz(dir / "missing.xyz"), ParseError);
}

TEST_CASE("off tetrahedron sampling stays on the faces") {
  const fs::path dir = scratch_dir("off");
  const fs::path p = write_text(dir / "t.off", "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n");
  const PointCloud c = load_off(p, 1024, 4);
  CHECK(c.size() == 1024);
  std::set<int> faces_hit;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double q[3];
    for (std::size_t d = 0; d < 3; ++d) q[d] = c.xyz[3 * i + d] * c.scale + c.center[d];
    const double dist[4] = {std::abs(q[0]), std::abs(q[1]), std::abs(q[2]), std::abs(q[0] + q[1] + q[2] - 1.0) / std::sqrt(3.0)};
    const int best = static_cast<int>(std::min_element(dist, dist + 4) - dist);
    CHECK(dist[best] < 1e-6);
    faces_hit.insert(best);
  }
  CHECK(faces_hit.size() == 4);
  CHECK(load_off(p, 0, 4).size() == 4);
  CHECK_THROWS_AS(load_off(write_text(dir / "e.off", ""), 16, 1), ParseError);
  CHECK_THROWS_AS(load_off(write_text(dir / "h.off", "PLY\n"), 16, 1), ParseError);
  CHECK_THROWS_AS(load_off(write_text(dir / "f.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n"), 16, 1), ParseError);
  CHECK(error_line([&] { load_off(write_text(dir / "v.off", "OFF\n2 0 0\n0 0 0\n1 q 0\n"), 0, 1); }) == 4);
}

TEST_CASE("dataset split") {
  const std::vector<ShapeKind> classes{ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus};
  const Dataset d = make_dataset(classes, 100, 64, 1);
  CHECK(d.train.size() == 320);
  CHECK(d.test.size() == 80);
  CHECK(d.num_classes == 4);
  std::vector<std::size_t> train_hist(4), test_hist(4);
  for (const auto& c : d.train) ++train_hist[c.label];
  for (const auto& c : d.test) ++test_hist[c.label];
  CHECK(train_hist == std::vector<std::size_t>(4, 80));
  CHECK(test_hist == std::vector<std::size_t>(4, 20));
  std::set<std::vector<double>> seen;
  for (const auto& c : d.train) seen.insert(c.xyz);
  for (const auto& c : d.test) CHECK(seen.count(c.xyz) == 0);
  CHECK(make_dataset(classes, 100, 64, 1).test[7].xyz == d.test[7].xyz);
}

TEST_CASE("manifest round trip and stacking") {
  const fs::path dir = scratch_dir("manifest");
  const std::vector<ShapeKind> classes{ShapeKind::Sphere, ShapeKind::Cone};
  const Dataset d = make_dataset(classes, 5, 32, 2);
  const fs::path m = write_manifest(d.train, dir, "train");
  const auto back = load_manifest(m, 32, 2);
  REQUIRE(back.size() == d.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].label == d.train[i].label);
    for (std::size_t j = 0; j < back[i].xyz.size(); ++j) CHECK(std::abs(back[i].xyz[j] - d.train[i].xyz[j]) < 1e-9);
  }
  CHECK_THROWS_AS(load_manifest(write_text(dir / "bad.txt", "train_0.xyz\n"), 32, 2), ParseError);

  const Tensor t = stack_points(std::span<const PointCloud>(d.train.data(), 3));
  CHECK(t.shape() == Shape{96, 3});
  CHECK(t.at(32, 1) == d.train[1].xyz[1]);
  std::vector<PointCloud> mixed{d.train[0], generate_shape(ShapeKind::Cube, 16, 1)};
  CHECK_THROWS_AS(stack_points(std::span<const PointCloud>(mixed)), DimensionError);
}

}  // TEST_SUITE
