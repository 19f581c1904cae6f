#include <doctest.h>

#include <bipoint/error.hpp>
#include <bipoint/harness.hpp>

#include <cmath>
#include <sstream>

using namespace bipoint;

namespace {

RunConfig tiny(Method m) {
  RunConfig c;
  c.model.point_widths = {3, 16, 32};
  c.model.head_widths = {32, 16};
  c.model.n_points = 32;
  c.classes = {ShapeKind::Sphere, ShapeKind::Cube};
  c.per_class = 10;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 0.01;
  c.probe_size = 8;
  apply_method(c, m);
  c.resolve();
  return c;
}

std::vector<PointCloud> labelled(std::size_t k, std::size_t per) {
  std::vector<PointCloud> out;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < per; ++i) {
      PointCloud p;
      p.label = c;
      out.push_back(p);
    }
  return out;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char ch : s) n += ch == '\n';
  return n;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("scoring") {
  const auto clouds = labelled(4, 5);
  std::vector<std::size_t> perfect, constant(clouds.size(), 2);
  for (const auto& c : clouds) perfect.push_back(c.label);
  const EvalResult p = score_predictions(perfect, clouds, 4);
  CHECK(p.oa == 1.0);
  for (double a : p.per_class) CHECK(a == 1.0);
  const EvalResult k = score_predictions(constant, clouds, 4);
  CHECK(k.oa == doctest::Approx(0.25));
  CHECK(k.per_class[2] == 1.0);
  CHECK(k.per_class[0] == 0.0);
  CHECK(std::isnan(score_predictions(perfect, clouds, 5).per_class[4]));
  std::vector<std::size_t> bad = perfect;
  bad[0] = 4;
  CHECK_THROWS_AS(score_predictions(bad, clouds, 4), ConfigError);
  CHECK_THROWS_AS(score_predictions(perfect, clouds, 3), ConfigError);
  CHECK_THROWS_AS(score_predictions(std::span(perfect).first(3), clouds, 4), DimensionError);
}

TEST_CASE("training is reproducible and logs every epoch") {
  for (Method m : {Method::FullPrecision, Method::OursMax}) {
    const RunConfig c = tiny(m);
    const Dataset d = load_dataset(c);
    CHECK(d.train.size() == 16);
    TrainResult a = train(c, d);
    TrainResult b = train(c, d);
    REQUIRE(a.log.size() == 2);
    CHECK(metrics_csv(a.log) == metrics_csv(b.log));
    CHECK(count_lines(metrics_csv(a.log)) == 3);
    CHECK(std::isnan(a.log.back().reg_loss));
    CHECK(std::isnan(a.log.back().saturation) == (m == Method::FullPrecision));
    const EvalResult e1 = evaluate(a.model, d.test), e2 = evaluate(a.model, d.test);
    CHECK(e1.oa == e2.oa);
    CHECK(e1.predictions == e2.predictions);
    CHECK(e1.oa == a.test_oa);
  }
}

TEST_CASE("T-Net runs log the orthogonality penalty") {
  RunConfig c = tiny(Method::OursMax);
  c.model.use_tnet = true;
  c.model.tnet_point_widths = {3, 16};
  c.model.tnet_head_widths = {16, 8};
  c.epochs = 1;
  const TrainResult r = train(c);
  CHECK(std::isfinite(r.log.back().reg_loss));
  CHECK(r.log.back().reg_loss >= 0.0);
}

TEST_CASE("output files") {
  RunConfig c = tiny(Method::OursMax);
  c.epochs = 1;
  c.output_dir = (std::filesystem::temp_directory_path() / "bipoint_test_run").string();
  std::filesystem::remove_all(c.output_dir);
  std::ostringstream progress;
  train(c, {.progress = &progress, .write_outputs = true});
  for (const char* f : {"metrics.csv", "model.bpnt", "config.ini"})
    CHECK(std::filesystem::exists(std::filesystem::path(c.output_dir) / f));
  CHECK_FALSE(progress.str().empty());
  CHECK(to_ini(load_config(std::filesystem::path(c.output_dir) / "config.ini")) == to_ini(c));
}

TEST_CASE("ablation table schema") {
  RunConfig c = tiny(Method::FullPrecision);
  c.epochs = 1;
  const std::uint64_t seeds[] = {1, 2};
  const auto rows = ablate(c, seeds);
  REQUIRE(rows.size() == 7);
  for (const auto& r : rows) CHECK(r.oa.size() == 2);
  const std::string csv = ablation_csv(rows);
  CHECK(count_lines(csv) == 8);
  CHECK(csv.find("ours-max") != std::string::npos);
  CHECK(csv.find("aggregation") != std::string::npos);
}

TEST_CASE("gemm bench sanity") {
  const BenchRow r = bench_gemm(64, 256, 32, 1, 3);
  CHECK(r.verified);
  CHECK(r.float_bits == 32 * r.packed_bits);
  CHECK(r.xnor_ms > 0.0);
  CHECK(count_lines(bench_csv(std::span(&r, 1))) == 2);
}

}  // TEST_SUITE
