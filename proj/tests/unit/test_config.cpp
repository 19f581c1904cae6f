#include <doctest.h>

#include <bipoint/config.hpp>
#include <bipoint/error.hpp>

#include <set>

using namespace bipoint;

TEST_SUITE("config") {

TEST_CASE("defaults survive an ini round trip") {
  RunConfig c;
  c.resolve();
  const std::string text = to_ini(c);
  const RunConfig back = parse_config(text);
  CHECK(to_ini(back) == text);
  CHECK(back.epochs == 30);
  CHECK(back.batch_size == 16);
  CHECK(back.lr == 0.001);
}

TEST_CASE("every field is carried") {
  RunConfig c;
  c.model.point_widths = {3, 8, 16};
  c.model.head_widths = {16, 8};
  c.model.use_tnet = true;
  c.model.tnet_point_widths = {3, 8};
  c.model.tnet_head_widths = {8, 4};
  c.model.reg_weight = 0.25;
  c.classes = {ShapeKind::Cone, ShapeKind::Sphere, ShapeKind::Torus};
  c.per_class = 12;
  c.model.n_points = 77;
  c.noise = 0.003;
  c.epochs = 3;
  c.batch_size = 5;
  c.lr = 0.0123;
  c.seed = 99;
  c.output_dir = "out/x";
  c.probe_size = 7;
  c.divergence_guard = false;
  apply_method(c, Method::OursAvg);
  c.resolve();
  const RunConfig back = parse_config(to_ini(c));
  CHECK(to_ini(back) == to_ini(c));
  CHECK(back.model.binarized);
  CHECK(back.model.aggregation.kind == AggregationKind::EmaAvg);
  CHECK(back.model.num_classes == 3);
  CHECK(back.model.aggregation.n == 77);
  CHECK(back.seed == 99);
  CHECK(back.output_dir == "out/x");
}

TEST_CASE("partial files fall back to defaults") {
  const RunConfig c = parse_config("# toy\n[model]\naggregation = ema-max\nbinarized = true\n\n[data]\nn_points = 256\n");
  CHECK(c.model.binarized);
  CHECK(c.model.aggregation.kind == AggregationKind::EmaMax);
  CHECK(c.model.aggregation.n == 256);
  CHECK(c.model.aggregation.delta == doctest::Approx(solve_delta_max_cf(256)));
  CHECK(c.epochs == 30);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(parse_config("[model]\nwidth_multiplier = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nepochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nepochs = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[data]\nclasses = sphere,blob\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\npoint_widths = 4,8\n"), ConfigError);
  try {
    parse_config("[train]\nepochs = 3\nthis line has no equals sign\n", "x.ini");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("ablation methods") {
  const auto methods = all_methods();
  CHECK(methods.size() == 7);
  std::set<std::string> names;
  for (Method m : methods) {
    names.insert(std::string(to_string(m)));
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK(names.size() == 7);
  CHECK_THROWS_AS(parse_method("xnor-net"), ConfigError);

  RunConfig c;
  apply_method(c, Method::FullPrecision);
  CHECK_FALSE(c.model.binarized);
  CHECK(bit_width(Method::FullPrecision) == "32/32");
  apply_method(c, Method::Bnn);
  CHECK(c.model.binarized);
  CHECK_FALSE(c.model.lsr);
  CHECK(c.model.aggregation.kind == AggregationKind::PlainMax);
  apply_method(c, Method::BnnLsr);
  CHECK(c.model.lsr);
  CHECK(c.model.aggregation.kind == AggregationKind::PlainMax);
  apply_method(c, Method::BnnEmaMax);
  CHECK_FALSE(c.model.lsr);
  CHECK(c.model.aggregation.kind == AggregationKind::EmaMax);
  apply_method(c, Method::OursMax);
  CHECK(c.model.lsr);
  CHECK(c.model.aggregation.kind == AggregationKind::EmaMax);
  CHECK(bit_width(Method::OursMax) == "1/1");
}

}  // TEST_SUITE
