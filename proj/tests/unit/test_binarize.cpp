#include <doctest.h>

#include <bipoint/binarize.hpp>
#include <bipoint/error.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/binomial.hpp>

#include <cmath>

#include "grad_check.hpp"

using namespace bipoint;
using testutil::normals;

namespace {

std::vector<double> random_pm1(std::size_t n, Xoshiro256& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.coin() ? 1.0 : -1.0;
  return v;
}

}  // namespace

TEST_SUITE("binarize") {

TEST_CASE("sign_ste forward and window") {
  Tensor x = Tensor::from_values({1, 4}, {0.0, 0.5, 1.5, -0.3}, true);
  Tensor y = sign_ste(x);
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(0, 1) == 1.0);
  CHECK(y.at(0, 2) == 1.0);
  CHECK(y.at(0, 3) == -1.0);
  backward(sum(scale(y, 2.0)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 2.0);
}

TEST_CASE("STE gradient nonzero exactly inside (-1, 1)") {
  std::vector<double> v = normals(200, 2, 1.5);
  v.push_back(1.0);
  v.push_back(-1.0);
  Tensor x = Tensor::from_values({v.size()}, v, true);
  backward(sum(sign_ste(x)));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK((x.grad()[i] != 0.0) == (std::abs(v[i]) < 1.0));
}

TEST_CASE("pack layout") {
  BitMatrix ones = BitMatrix::pack(std::vector<double>(64, 1.0), 1, 64);
  REQUIRE(ones.words().size() == 1);
  CHECK(ones.words()[0] == 0xFFFFFFFFFFFFFFFFull);
  BitMatrix neg = BitMatrix::pack(std::vector<double>(65, -1.0), 1, 65);
  REQUIRE(neg.words().size() == 2);
  CHECK(neg.words()[0] == 0);
  CHECK(neg.words()[1] == 0);
  BitMatrix pos65 = BitMatrix::pack(std::vector<double>(65, 1.0), 1, 65);
  CHECK(pos65.words()[1] == 1);  // padding stays zero
  BitMatrix lsb = BitMatrix::pack(std::vector<double>{1, -1, -1}, 1, 3);
  CHECK(lsb.words()[0] == 1);
  CHECK_THROWS_AS(BitMatrix::pack(std::vector<double>{1, 0.5}, 1, 2), EncodingError);
  CHECK(BitMatrix(37, 129).byte_size() == 37 * 3 * 8);
}

TEST_CASE("pack round trip over random matrices") {
  Xoshiro256 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t r = 1 + rng.below(37), c = 1 + rng.below(129);
    const auto v = random_pm1(r * c, rng);
    const BitMatrix m = BitMatrix::pack(v, r, c);
    REQUIRE(m.unpack() == v);
    const std::size_t tail = c % 64;
    if (tail)
      for (std::size_t i = 0; i < r; ++i) REQUIRE((m.row(i).back() >> tail) == 0);
  }
}

TEST_CASE("xnor gemm small cases and parity") {
  BitMatrix a = BitMatrix::pack(std::vector<double>{1, -1, 1}, 1, 3);
  BitMatrix w = BitMatrix::pack(std::vector<double>{1, 1, -1}, 3, 1);
  CHECK(xnor_gemm_natural(a, w).at(0, 0) == -1);
  Xoshiro256 rng(4);
  for (std::size_t m : {1u, 63u, 64u, 65u, 200u}) {
    const auto v = random_pm1(m, rng);
    CHECK(xnor_gemm_natural(BitMatrix::pack(v, 1, m), BitMatrix::pack(v, m, 1)).at(0, 0) == static_cast<int>(m));
  }
  CHECK_THROWS_AS(xnor_gemm(BitMatrix(2, 3), BitMatrix(2, 4)), DimensionError);
}

TEST_CASE("xnor gemm equals the float product") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Xoshiro256 rng(seed);
    const std::size_t n = 64, m = 256, k = 32;
    const auto av = random_pm1(n * m, rng), wv = random_pm1(m * k, rng);
    const IntMatrix z = xnor_gemm_natural(BitMatrix::pack(av, n, m), BitMatrix::pack(wv, m, k));
    const Tensor f = matmul(Tensor::from_values({n, m}, av), Tensor::from_values({m, k}, wv));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        REQUIRE(z.at(i, j) == static_cast<std::int32_t>(f.at(i, j)));
        REQUIRE(((z.at(i, j) - static_cast<int>(m)) % 2) == 0);
      }
  }
}

TEST_CASE("output distribution of a +-1 inner product") {
  Xoshiro256 rng(5);
  for (std::size_t m : {4u, 8u, 16u}) {
    const std::size_t draws = 100000;
    std::vector<double> counts(m + 1, 0.0);
    for (std::size_t t = 0; t < draws; ++t) {
      const auto a = random_pm1(m, rng), w = random_pm1(m, rng);
      const int z = xnor_gemm_natural(BitMatrix::pack(a, 1, m), BitMatrix::pack(w, m, 1)).at(0, 0);
      counts[static_cast<std::size_t>((z + static_cast<int>(m)) / 2)] += 1.0;
    }
    // merge tail bins so every expected count is at least 5
    std::vector<double> obs, exp;
    double o = 0.0, e = 0.0;
    for (std::size_t i = 0; i <= m; ++i) {
      o += counts[i];
      e += draws * std::pow(0.5, static_cast<double>(m)) * boost::math::binomial_coefficient<double>(m, i);
      if (e >= 5.0) {
        obs.push_back(o);
        exp.push_back(e);
        o = e = 0.0;
      }
    }
    if (e > 0.0) {
      obs.back() += o;
      exp.back() += e;
    }
    double chi2 = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) chi2 += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
    const boost::math::chi_squared dist(static_cast<double>(obs.size() - 1));
    CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 0.01);
  }
}

TEST_CASE("bnn layer output spread at m = 256") {
  Xoshiro256 rng(6);
  const std::size_t n = 400, m = 256, k = 64;
  const Tensor z = bnn_linear_forward(Tensor::from_values({n, m}, random_pm1(n * m, rng)),
                                      Tensor::from_values({m, k}, normals(m * k, 7)));
  double s = 0.0, s2 = 0.0;
  for (double v : z.values()) {
    s += v;
    s2 += v * v;
  }
  const double cnt = static_cast<double>(z.numel());
  const double mean = s / cnt, sd = std::sqrt(s2 / cnt - mean * mean);
  CHECK(std::abs(mean) < 0.05 * 16.0 * 2.0);
  CHECK(sd == doctest::Approx(16.0).epsilon(0.03));
}

TEST_CASE("bi-linear forward") {
  Xoshiro256 rng(8);
  BiLinearLayer layer(8, 3, rng, true);
  CHECK_THROWS_AS(layer.forward(Tensor::full({2, 8}, 1.0)), StateError);
  for (auto& v : layer.latent_weight().values()) v = 0.3;
  layer.set_alpha(1.0);
  const Tensor eight = layer.forward(Tensor::full({2, 8}, 1.0));
  for (double v : eight.values()) CHECK(v == 8.0);

  BiLinearLayer fixed(8, 3, rng, false);
  CHECK(fixed.alpha_value() == 1.0);
  for (auto& v : fixed.latent_weight().values()) v = 0.2;
  const Tensor x = Tensor::from_values({3, 8}, normals(24, 9));
  const Tensor z = fixed.forward(x);
  const Tensor ref = bnn_linear_forward(x, fixed.latent_weight());
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.values()[i] == ref.values()[i]);
  // all-positive weights: every output is the row's sign sum
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 8; ++c) s += binary_sign(x.at(i, c));
    CHECK(z.at(i, 0) == s);
  }
}

TEST_CASE("bnn forward equals bi-linear output over alpha") {
  Xoshiro256 rng(10);
  BiLinearLayer layer(16, 5, rng, true);
  layer.set_alpha(0.37);
  const Tensor x = Tensor::from_values({4, 16}, normals(64, 11));
  const Tensor z = layer.forward(x);
  const Tensor b = bnn_linear_forward(x, layer.latent_weight());
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.values()[i] / 0.37 == doctest::Approx(b.values()[i]));
}

TEST_CASE("alpha gradient by hand") {
  Tensor x = Tensor::from_values({2, 3}, {0.2, -0.4, 0.9, -0.1, 0.3, -0.8});
  Tensor w = Tensor::from_values({3, 2}, {0.5, -0.5, -0.2, 0.1, 0.3, 0.7});
  BiLinearLayer layer = BiLinearLayer::from_parts(w, 1.7, true);
  const Tensor gz = Tensor::from_values({2, 2}, {1.0, -2.0, 0.5, 3.0});
  backward(sum(mul(layer.forward(x), gz)));
  // B_a = [[1,-1,1],[-1,1,-1]], B_w = [[1,-1],[-1,1],[1,1]] -> B_a.B_w = [[3,-1],[-3,1]]
  CHECK(layer.alpha().grad()[0] == doctest::Approx(1.0 * 3 + -2.0 * -1 + 0.5 * -3 + 3.0 * 1));
}

TEST_CASE("deploy mode matches train mode exactly") {
  Xoshiro256 rng(12);
  BiLinearLayer layer(100, 40, rng, true);
  layer.set_alpha(0.123456789);
  const Tensor x = Tensor::from_values({30, 100}, normals(3000, 13));
  const Tensor train = layer.forward(x);
  layer.set_mode(LayerMode::Deploy);
  CHECK(layer.packed_weight_transposed() ==
        transpose(BitMatrix::pack_signs(layer.latent_weight().values(), 100, 40)));
  const Tensor dep = layer.forward(x);
  for (std::size_t i = 0; i < train.numel(); ++i) REQUIRE(train.values()[i] == dep.values()[i]);
}

TEST_CASE("scale recovery initialization") {
  const std::size_t n = 400, m = 256, k = 250;
  const Tensor x = Tensor::from_values({n, m}, normals(n * m, 14));
  for (double c : {1.0, 0.5}) {
    Tensor w = Tensor::from_values({m, k}, normals(m * k, 15, c));
    BiLinearLayer layer = BiLinearLayer::from_parts(w, 0.0, true);
    CHECK_FALSE(layer.initialized());
    layer.lsr_init(x);
    CHECK(layer.alpha_value() == doctest::Approx(c).epsilon(0.05));
    const Tensor f = matmul(x, w), b = layer.forward(x);
    auto sd = [](std::span<const double> v) {
      double s = 0.0, s2 = 0.0;
      for (double e : v) {
        s += e;
        s2 += e * e;
      }
      const double mu = s / static_cast<double>(v.size());
      return std::sqrt(s2 / static_cast<double>(v.size()) - mu * mu);
    };
    CHECK(sd(b.values()) / sd(f.values()) == doctest::Approx(1.0).epsilon(0.1));
  }
  BiLinearLayer fixed = BiLinearLayer::from_parts(Tensor::from_values({m, k}, normals(m * k, 16)), 0.0, false);
  fixed.lsr_init(x);
  CHECK(fixed.alpha_value() == 1.0);
}

TEST_CASE("scale init with a constant weight") {
  const std::size_t n = 2000, m = 64, k = 4;
  const double c = 0.3;
  const Tensor x = Tensor::from_values({n, m}, normals(n * m, 17));
  BiLinearLayer layer = BiLinearLayer::from_parts(Tensor::full({m, k}, c), 0.0, true);
  layer.lsr_init(x);
  // float output = c * row sum ~ N(0, c^2 m); binary output = row sign sum ~ sd sqrt(m)
  CHECK(layer.alpha_value() == doctest::Approx(c).epsilon(0.08));
}

TEST_CASE("degenerate calibration") {
  BiLinearLayer layer = BiLinearLayer::from_parts(Tensor::full({4, 2}, 0.5), 0.0, true);
  CHECK_THROWS_AS(layer.lsr_init(Tensor::full({3, 4}, 1.0)), InitializationError);
  CHECK_THROWS_AS(layer.lsr_init(Tensor::zeros({0, 4})), InitializationError);
}

TEST_CASE("latent clipping keeps weights in the window") {
  BiLinearLayer layer = BiLinearLayer::from_parts(Tensor::from_values({2, 1}, {1.7, -3.0}), 0.5, true);
  layer.alpha().values()[0] = -1.0;
  layer.clip_latent();
  CHECK(layer.latent_weight().values()[0] == 1.0);
  CHECK(layer.latent_weight().values()[1] == -1.0);
  CHECK(layer.alpha_value() == BiLinearLayer::kMinAlpha);
}

}  // TEST_SUITE
