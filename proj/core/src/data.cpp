#include "bipoint/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bipoint/error.hpp"
#include "bipoint/rng.hpp"

namespace bipoint {

namespace {

using Vec3 = std::array<double, 3>;
constexpr double kPi = std::numbers::pi;
constexpr double kTorusMajor = 1.0;
constexpr double kTorusMinor = 0.4;

Vec3 unit_vector(Xoshiro256& rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (r > 1e-12) return {v[0] / r, v[1] / r, v[2] / r};
  }
}

Vec3 sample_surface(ShapeKind kind, Xoshiro256& rng) {
  switch (kind) {
    case ShapeKind::Sphere: return unit_vector(rng);
    case ShapeKind::Cube: {
      const auto face = rng.below(6);
      Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      p[face / 2] = face % 2 ? 1.0 : -1.0;
      return p;
    }
    case ShapeKind::Cylinder: {
      // radius 1, z in [-1, 1]: side area 4pi, each cap pi.
      const double u = rng.uniform() * 6.0 * kPi;
      const double theta = rng.uniform(0.0, 2.0 * kPi);
      if (u < 4.0 * kPi) return {std::cos(theta), std::sin(theta), rng.uniform(-1.0, 1.0)};
      const double r = std::sqrt(rng.uniform());
      return {r * std::cos(theta), r * std::sin(theta), u < 5.0 * kPi ? 1.0 : -1.0};
    }
    case ShapeKind::Torus: {
      // Area element is proportional to (R + r cos phi).
      for (;;) {
        const double theta = rng.uniform(0.0, 2.0 * kPi);
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const double w = kTorusMajor + kTorusMinor * std::cos(phi);
        if (rng.uniform() * (kTorusMajor + kTorusMinor) > w) continue;
        return {w * std::cos(theta), w * std::sin(theta), kTorusMinor * std::sin(phi)};
      }
    }
    case ShapeKind::Cone: {
      // Apex (0,0,1), unit base at z=-1; side area pi*sqrt(5), base pi.
      const double side = kPi * std::sqrt(5.0);
      const double theta = rng.uniform(0.0, 2.0 * kPi);
      if (rng.uniform() * (side + kPi) < side) {
        const double t = std::sqrt(rng.uniform());
        return {t * std::cos(theta), t * std::sin(theta), 1.0 - 2.0 * t};
      }
      const double r = std::sqrt(rng.uniform());
      return {r * std::cos(theta), r * std::sin(theta), -1.0};
    }
  }
  throw ConfigError("unknown shape kind");
}

bool centrally_symmetric(ShapeKind kind) { return kind != ShapeKind::Cone; }

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string(), line, what);
}

// Up to `want` numbers from a line; separators are whitespace or commas.
std::vector<double> parse_numbers(const std::string& line, const std::filesystem::path& path, std::size_t lineno) {
  std::vector<double> out;
  const char* p = line.c_str();
  while (*p) {
    while (*p && (std::isspace(static_cast<unsigned char>(*p)) || *p == ',')) ++p;
    if (!*p) break;
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p) parse_fail(path, lineno, "expected a number, got '" + std::string(p) + "'");
    if (!std::isfinite(v)) parse_fail(path, lineno, "non-finite coordinate");
    out.push_back(v);
    p = end;
  }
  return out;
}

bool skippable(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Cube: return "cube";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Torus: return "torus";
    case ShapeKind::Cone: return "cone";
  }
  return "?";
}

ShapeKind parse_shape(std::string_view name) {
  for (auto k : all_shapes())
    if (to_string(k) == name) return k;
  throw ConfigError("unknown shape '" + std::string(name) + "'");
}

std::vector<ShapeKind> all_shapes() {
  return {ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus, ShapeKind::Cone};
}

PointCloud generate_shape(ShapeKind kind, std::size_t n, std::uint64_t seed, const ShapeOptions& opts) {
  if (n < 8) throw ConfigError("generate_shape: need at least 8 points, got " + std::to_string(n));
  if (!(opts.noise_sigma >= 0.0)) throw ConfigError("generate_shape: negative noise");
  Xoshiro256 rng(seed);
  std::vector<Vec3> pts;
  pts.reserve(n);
  if (centrally_symmetric(kind)) {
    while (pts.size() + 2 <= n - (kind == ShapeKind::Sphere && n % 2 ? 3 : 0)) {
      const Vec3 p = sample_surface(kind, rng);
      pts.push_back(p);
      pts.push_back({-p[0], -p[1], -p[2]});
    }
    if (pts.size() < n && kind == ShapeKind::Sphere) {
      // Three unit vectors 120 degrees apart in a random plane.
      const Vec3 u = unit_vector(rng);
      Vec3 t = unit_vector(rng);
      const double d = t[0] * u[0] + t[1] * u[1] + t[2] * u[2];
      for (int i = 0; i < 3; ++i) t[i] -= d * u[i];
      const double tn = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
      for (auto& v : t) v /= tn;
      const double c = -0.5, s = std::sqrt(3.0) / 2.0;
      const Vec3 v{c * u[0] + s * t[0], c * u[1] + s * t[1], c * u[2] + s * t[2]};
      const Vec3 sum{u[0] + v[0], u[1] + v[1], u[2] + v[2]};
      pts.push_back(u);
      pts.push_back(v);
      pts.push_back({-sum[0], -sum[1], -sum[2]});
    }
    while (pts.size() < n) pts.push_back(sample_surface(kind, rng));
  } else {
    for (std::size_t i = 0; i < n; ++i) pts.push_back(sample_surface(kind, rng));
  }
  if (opts.noise_sigma > 0.0)
    for (auto& p : pts)
      for (auto& v : p) v += opts.noise_sigma * rng.normal();
  if (opts.rotate) {
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    const double c = std::cos(angle), s = std::sin(angle);
    for (auto& p : pts) {
      const double x = c * p[0] - s * p[1];
      const double y = s * p[0] + c * p[1];
      p[0] = x;
      p[1] = y;
    }
  }
  PointCloud cloud;
  cloud.xyz.reserve(n * 3);
  for (const auto& p : pts) cloud.xyz.insert(cloud.xyz.end(), p.begin(), p.end());
  normalize(cloud);
  return cloud;
}

void normalize(PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (n == 0) throw EmptyInputError("normalize: empty cloud");
  Vec3 c{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) c[k] += cloud.xyz[i * 3 + k];
  for (auto& v : c) v /= static_cast<double>(n);
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = cloud.xyz[i * 3 + k] - c[k];
      s += d * d;
    }
    r = std::max(r, s);
  }
  r = std::sqrt(r);
  if (!(r > 0.0)) throw DomainError("normalize: all points coincide");
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) cloud.xyz[i * 3 + k] = (cloud.xyz[i * 3 + k] - c[k]) / r;
  for (int k = 0; k < 3; ++k) cloud.center[k] += c[k] * cloud.scale;
  cloud.scale *= r;
}

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skippable(line)) continue;
    const auto v = parse_numbers(line, path, lineno);
    if (v.size() < 3) parse_fail(path, lineno, "expected 'x y z'");
    cloud.xyz.insert(cloud.xyz.end(), v.begin(), v.begin() + 3);
  }
  if (cloud.xyz.empty()) parse_fail(path, lineno, "no points");
  normalize(cloud);
  return cloud;
}

PointCloud load_off(const std::filesystem::path& path, std::size_t n_points, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!skippable(line)) return true;
    }
    return false;
  };
  if (!next_line()) parse_fail(path, lineno, "empty file");
  auto start = line.find_first_not_of(" \t");
  if (line.compare(start, 3, "OFF") != 0) parse_fail(path, lineno, "missing OFF header");
  // Some exporters glue the counts onto the header line ("OFF8 6 0").
  std::string counts_text = line.substr(start + 3);
  if (counts_text.find_first_not_of(" \t\r") == std::string::npos) {
    if (!next_line()) parse_fail(path, lineno, "missing vertex/face counts");
    counts_text = line;
  }
  const auto counts = parse_numbers(counts_text, path, lineno);
  if (counts.size() < 2) parse_fail(path, lineno, "expected vertex and face counts");
  const auto nv = static_cast<std::size_t>(counts[0]);
  const auto nf = static_cast<std::size_t>(counts[1]);
  if (nv == 0) parse_fail(path, lineno, "no vertices");

  std::vector<Vec3> verts(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!next_line()) parse_fail(path, lineno, "unexpected end of file in vertex list");
    const auto v = parse_numbers(line, path, lineno);
    if (v.size() < 3) parse_fail(path, lineno, "expected 'x y z'");
    verts[i] = {v[0], v[1], v[2]};
  }
  std::vector<std::array<std::size_t, 3>> tris;
  for (std::size_t f = 0; f < nf; ++f) {
    if (!next_line()) parse_fail(path, lineno, "unexpected end of file in face list");
    const auto v = parse_numbers(line, path, lineno);
    if (v.empty()) parse_fail(path, lineno, "empty face");
    const auto k = static_cast<std::size_t>(v[0]);
    if (k < 3 || v.size() < k + 1) parse_fail(path, lineno, "face needs at least 3 vertex indices");
    std::vector<std::size_t> idx(k);
    for (std::size_t j = 0; j < k; ++j) {
      if (v[j + 1] < 0 || static_cast<std::size_t>(v[j + 1]) >= nv) parse_fail(path, lineno, "vertex index out of range");
      idx[j] = static_cast<std::size_t>(v[j + 1]);
    }
    for (std::size_t j = 1; j + 1 < k; ++j) tris.push_back({idx[0], idx[j], idx[j + 1]});
  }

  PointCloud cloud;
  if (n_points == 0 || tris.empty()) {
    for (const auto& p : verts) cloud.xyz.insert(cloud.xyz.end(), p.begin(), p.end());
    normalize(cloud);
    return cloud;
  }
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& t : tris) {
    const Vec3 &a = verts[t[0]], &b = verts[t[1]], &c = verts[t[2]];
    const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const Vec3 w{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const Vec3 x{u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]};
    total += 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) parse_fail(path, lineno, "mesh has zero surface area");
  Xoshiro256 rng(seed);
  cloud.xyz.reserve(n_points * 3);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double pick = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const auto& t = tris[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), tris.size() - 1)];
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
    for (int k = 0; k < 3; ++k)
      cloud.xyz.push_back(wa * verts[t[0]][k] + wb * verts[t[1]][k] + wc * verts[t[2]][k]);
  }
  normalize(cloud);
  return cloud;
}

PointCloud load_cloud(const std::filesystem::path& path, std::size_t n_points, std::uint64_t seed) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".off") return load_off(path, n_points, seed);
  if (ext == ".xyz" || ext == ".txt" || ext == ".pts") return load_xyz(path);
  throw ParseError(path.string(), 0, "unsupported point-cloud extension '" + ext + "'");
}

Dataset make_dataset(std::span<const ShapeKind> classes, std::size_t per_class, std::size_t n_points,
                     std::uint64_t seed, const ShapeOptions& opts) {
  if (per_class < 2) throw ConfigError("make_dataset: need at least 2 clouds per class");
  if (classes.size() < 2) throw ConfigError("make_dataset: need at least 2 classes");
  Dataset ds;
  ds.num_classes = classes.size();
  const std::size_t n_train = std::max<std::size_t>(1, per_class * 4 / 5);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      PointCloud cloud = generate_shape(classes[c], n_points, derive_seed(seed, c * per_class + i), opts);
      cloud.label = c;
      (i < n_train ? ds.train : ds.test).push_back(std::move(cloud));
    }
  }
  return ds;
}

std::vector<PointCloud> load_manifest(const std::filesystem::path& manifest, std::size_t n_points,
                                      std::uint64_t seed) {
  std::ifstream in(manifest);
  if (!in) throw ParseError(manifest.string(), 0, "cannot open manifest");
  const auto base = manifest.parent_path();
  std::vector<PointCloud> clouds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skippable(line)) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) parse_fail(manifest, lineno, "expected 'path,label'");
    const std::string file = line.substr(0, comma);
    const std::string label_text = line.substr(comma + 1);
    if (lineno == 1 && label_text == "label") continue;
    char* end = nullptr;
    const long label = std::strtol(label_text.c_str(), &end, 10);
    if (end == label_text.c_str() || *end != '\0' || label < 0) parse_fail(manifest, lineno, "bad label");
    std::filesystem::path p(file);
    if (p.is_relative()) p = base / p;
    PointCloud cloud = load_cloud(p, n_points, derive_seed(seed, clouds.size()));
    cloud.label = static_cast<std::size_t>(label);
    clouds.push_back(std::move(cloud));
  }
  if (clouds.empty()) parse_fail(manifest, lineno, "manifest lists no clouds");
  return clouds;
}

std::filesystem::path write_manifest(std::span<const PointCloud> clouds, const std::filesystem::path& dir,
                                     const std::string& prefix) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / (prefix + "_manifest.csv");
  std::ofstream m(manifest);
  if (!m) throw Error("cannot write '" + manifest.string() + "'");
  m << "path,label\n";
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const std::string name = prefix + "_" + std::to_string(i) + ".xyz";
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write '" + (dir / name).string() + "'");
    f.precision(17);
    for (std::size_t r = 0; r < clouds[i].size(); ++r)
      f << clouds[i].xyz[r * 3] << ' ' << clouds[i].xyz[r * 3 + 1] << ' ' << clouds[i].xyz[r * 3 + 2] << '\n';
    m << name << ',' << clouds[i].label << '\n';
  }
  return manifest;
}

Tensor stack_points(std::span<const PointCloud* const> clouds) {
  if (clouds.empty()) throw EmptyInputError("stack_points: no clouds");
  const std::size_t n = clouds.front()->size();
  std::vector<double> v;
  v.reserve(clouds.size() * n * 3);
  for (const PointCloud* c : clouds) {
    if (c->size() != n) throw DimensionError("stack_points: clouds differ in point count");
    v.insert(v.end(), c->xyz.begin(), c->xyz.end());
  }
  return Tensor::from_values({clouds.size() * n, 3}, std::move(v));
}

Tensor stack_points(std::span<const PointCloud> clouds) {
  std::vector<const PointCloud*> ptrs;
  for (const auto& c : clouds) ptrs.push_back(&c);
  return stack_points(std::span<const PointCloud* const>(ptrs));
}

}  // namespace bipoint
