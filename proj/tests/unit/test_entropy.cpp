#include <doctest.h>

#include <bipoint/entropy.hpp>
#include <bipoint/error.hpp>
#include <bipoint/rng.hpp>

#include <cmath>

using namespace bipoint;

TEST_SUITE("entropy") {

TEST_CASE("binary entropy") {
  CHECK(binary_entropy(0.5) == 1.0);
  CHECK(binary_entropy(0.0) == 0.0);
  CHECK(binary_entropy(1.0) == 0.0);
  CHECK(binary_entropy(0.25) == doctest::Approx(0.8112781244591328).epsilon(1e-14));
  CHECK_THROWS_AS(binary_entropy(-0.1), DomainError);
  CHECK_THROWS_AS(binary_entropy(1.1), DomainError);
  for (int i = 1; i <= 49; ++i) {
    const double e = i / 100.0;
    CHECK(binary_entropy(0.5) > binary_entropy(0.5 + e));
    CHECK(binary_entropy(0.5) > binary_entropy(0.5 - e));
    CHECK(binary_entropy(0.5 + e) == doctest::Approx(binary_entropy(0.5 - e)));
  }
}

TEST_CASE("max-pool entropy") {
  for (double p : {0.0, 0.1, 0.5, 0.77, 1.0}) CHECK(maxpool_entropy(1, p) == binary_entropy(p));
  CHECK(maxpool_entropy(2, 0.5) == doctest::Approx(0.8112781244591328));
  CHECK(maxpool_entropy(1024, 0.5) < 0.02);
  CHECK(maxpool_entropy(1024, 0.5) > 0.0);
  for (std::size_t n = 2; n <= 64; ++n) CHECK(maxpool_entropy(n, 0.5) < maxpool_entropy(n - 1, 0.5));
  for (std::size_t n : {1u, 7u, 100u, 1000u})
    CHECK(log2_maxpool_entropy(n, 0.5) == doctest::Approx(std::log2(maxpool_entropy(n, 0.5))).epsilon(1e-9));
  CHECK(std::isinf(log2_maxpool_entropy(5, 0.0)));
  CHECK(std::isfinite(log2_maxpool_entropy(4096, 0.5)));
}

TEST_CASE("onset of the decreasing tail") {
  std::vector<std::size_t> ns(64);
  for (std::size_t i = 0; i < ns.size(); ++i) ns[i] = i + 1;
  const auto half = verify_entropy_collapse(0.5, ns);
  CHECK(half.onset == 1);
  CHECK(half.tail_strictly_decreasing);
  CHECK(verify_entropy_collapse(0.2, ns).onset == 1);
  const auto high = verify_entropy_collapse(0.9, ns);
  CHECK(high.onset == 7);
  CHECK(high.tail_strictly_decreasing);
  std::vector<std::size_t> big(4096);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = i + 1;
  CHECK(verify_entropy_collapse(0.5, big).tail_strictly_decreasing);
}

TEST_CASE("empirical entropy") {
  SUBCASE("identical samples") {
    BitMatrix m(10, 5);
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 5; ++c) m.set_bit(r, c, c % 2 == 0);
    const auto rep = measure_feature_entropy(m, "same");
    CHECK(rep.mean_entropy == 0.0);
    CHECK(rep.context == "same");
    CHECK(rep.samples == 10);
    CHECK(homogenization_score(m) == 1.0);
  }
  SUBCASE("fair coins") {
    Xoshiro256 rng(1);
    BitMatrix m(10000, 8);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < 8; ++c) m.set_bit(r, c, rng.coin());
    const auto rep = measure_feature_entropy(m);
    CHECK(rep.mean_entropy > 0.99);
    for (double p : rep.p_pos) CHECK(std::abs(p - 0.5) < 0.03);
    CHECK(homogenization_score(m) == doctest::Approx(0.5).epsilon(0.02));
  }
  SUBCASE("half all-positive, half all-negative") {
    BitMatrix m(6, 3);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) m.set_bit(r, c, true);
    for (double e : measure_feature_entropy(m).entropy_bits) CHECK(e == 1.0);
  }
  SUBCASE("dense input uses sign with sign(0) = +1") {
    const Tensor t = Tensor::from_values({2, 2}, {0.0, -1.0, 0.0, 2.0});
    const auto rep = measure_feature_entropy(t);
    CHECK(rep.p_pos[0] == 1.0);
    CHECK(rep.p_pos[1] == 0.5);
    CHECK(homogenization_score(t) == 0.5);
  }
  CHECK_THROWS_AS(measure_feature_entropy(BitMatrix(1, 4)), SampleError);
  CHECK_THROWS_AS(homogenization_score(BitMatrix(1, 4)), SampleError);
}

TEST_CASE("saturation ratio") {
  const std::vector<double> v{0.0, 0.5, -0.99, 1.0, -1.0, 3.0};
  CHECK(ste_saturation_ratio(v) == doctest::Approx(0.5));
}

}  // TEST_SUITE
