#include <doctest.h>

#include <bipoint/error.hpp>
#include <bipoint/tensor.hpp>

#include <cmath>

#include "grad_check.hpp"

using namespace bipoint;
using testutil::grad_rel_error;
using testutil::normals;

TEST_SUITE("tensor") {

TEST_CASE("matmul small cases") {
  Tensor id = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(id, a);
  CHECK(std::vector<double>(c.values().begin(), c.values().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK(matmul(Tensor::from_values({1, 2}, {1, -1}), Tensor::from_values({2, 1}, {1, 1})).item() == 0.0);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("matmul matches a triple loop") {
  const auto av = normals(35, 1), bv = normals(21, 2);
  Tensor c = matmul(Tensor::from_values({5, 7}, av), Tensor::from_values({7, 3}, bv));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += av[i * 7 + k] * bv[k * 3 + j];
      CHECK(std::abs(c.at(i, j) - s) < 1e-12);
    }
}

TEST_CASE("finite differences: elementwise and linear ops") {
  Tensor a = Tensor::from_values({4, 3}, normals(12, 3));
  Tensor b = Tensor::from_values({3, 2}, normals(6, 4));
  CHECK(grad_rel_error({a, b}, [](const auto& in) { return sum(matmul(in[0], in[1])); }) < 1e-4);
  Tensor w = Tensor::from_values({4, 3}, normals(12, 5));
  CHECK(grad_rel_error({a, w}, [](const auto& in) { return sum(mul(add(in[0], in[1]), sub(in[0], in[1]))); }) < 1e-4);
  Tensor bias = Tensor::from_values({3}, normals(3, 6));
  CHECK(grad_rel_error({a, bias}, [](const auto& in) { return mean(mul(add_rowwise(in[0], in[1]), in[0])); }) < 1e-4);
  Tensor alpha = Tensor::scalar(0.7);
  CHECK(grad_rel_error({a, alpha}, [](const auto& in) { return sum(mul(scale(in[0], in[1]), in[0])); }) < 1e-4);
  CHECK(grad_rel_error({a}, [](const auto& in) { return sum(mul(shift(scale(in[0], 1.5), -0.2), in[0])); }) < 1e-4);
}

TEST_CASE("relu and hardtanh gradients away from kinks") {
  std::vector<double> v = normals(20, 7, 2.0);
  for (auto& x : v)
    if (std::abs(x) < 0.05 || std::abs(std::abs(x) - 1.0) < 0.05) x += 0.2;
  Tensor x = Tensor::from_values({4, 5}, v);
  Tensor w = Tensor::from_values({4, 5}, normals(20, 8));
  CHECK(grad_rel_error({x}, [&](const auto& in) { return sum(mul(relu(in[0]), w)); }) < 1e-4);
  CHECK(grad_rel_error({x}, [&](const auto& in) { return sum(mul(hardtanh(in[0]), w)); }) < 1e-4);
  CHECK(grad_rel_error({x}, [](const auto& in) { return sum(hardtanh(in[0])); }) < 1e-6);
}

TEST_CASE("hardtanh values and window") {
  Tensor x = Tensor::from_values({1, 2}, {0.5, 1.5}, true);
  Tensor y = hardtanh(x);
  CHECK(y.at(0, 0) == 0.5);
  CHECK(y.at(0, 1) == 1.0);
  backward(sum(y));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("batch norm") {
  SUBCASE("constant channel gives beta") {
    BatchNormStats st(1);
    Tensor y = batch_norm(Tensor::full({6, 1}, 3.0), Tensor::full({1}, 2.0), Tensor::full({1}, 0.25), st, Mode::Train);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.25));
  }
  SUBCASE("standardizes N(3, 4)") {
    Xoshiro256 rng(9);
    std::vector<double> v(100000);
    for (auto& x : v) x = 3.0 + 2.0 * rng.normal();
    BatchNormStats st(1);
    Tensor y = batch_norm(Tensor::from_values({v.size(), 1}, v), Tensor::full({1}, 1.0), Tensor::zeros({1}), st,
                          Mode::Train);
    double m = 0.0, s = 0.0;
    for (double x : y.values()) m += x;
    m /= static_cast<double>(v.size());
    for (double x : y.values()) s += (x - m) * (x - m);
    s = std::sqrt(s / static_cast<double>(v.size()));
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(s - 1.0) < 0.05);
  }
  SUBCASE("eval mode affine identity") {
    BatchNormStats st(1);
    st.running_mean = {0.0};
    st.running_var = {1.0};
    st.eps = 0.0;
    Tensor y = batch_norm(Tensor::full({1, 1}, 3.0), Tensor::full({1}, 2.0), Tensor::full({1}, 1.0), st, Mode::Eval);
    CHECK(y.item() == doctest::Approx(7.0));
  }
  SUBCASE("running statistics move by the momentum") {
    BatchNormStats st(1);
    batch_norm(Tensor::from_values({2, 1}, {1.0, 3.0}), Tensor::full({1}, 1.0), Tensor::zeros({1}), st, Mode::Train);
    CHECK(st.running_mean[0] == doctest::Approx(0.2));
    CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 2.0));
  }
  SUBCASE("single row in train mode") {
    BatchNormStats st(2);
    CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 2}), Tensor::full({2}, 1.0), Tensor::zeros({2}), st, Mode::Train),
                    DegenerateBatchError);
  }
  SUBCASE("finite differences") {
    Tensor x = Tensor::from_values({6, 3}, normals(18, 10));
    Tensor g = Tensor::from_values({3}, {1.2, 0.7, -0.4});
    Tensor b = Tensor::from_values({3}, {0.1, -0.3, 0.5});
    Tensor w = Tensor::from_values({6, 3}, normals(18, 11));
    CHECK(grad_rel_error({x, g, b}, [&](const auto& in) {
            BatchNormStats st(3);
            return sum(mul(batch_norm(in[0], in[1], in[2], st, Mode::Train, false), w));
          }) < 1e-4);
  }
}

TEST_CASE("pooling") {
  Tensor x = Tensor::from_values({3, 1}, {1, 3, 2});
  CHECK(pool_points(x, PoolKind::Max).item() == 3.0);
  CHECK(pool_points(x, PoolKind::Avg).item() == 2.0);
  Tensor one = Tensor::from_values({1, 2}, {4, -5});
  for (auto k : {PoolKind::Max, PoolKind::Avg}) {
    Tensor p = pool_points(one, k);
    CHECK(p.at(0, 0) == 4.0);
    CHECK(p.at(0, 1) == -5.0);
  }
  CHECK_THROWS_AS(pool_points(Tensor::zeros({0, 2}), PoolKind::Max), EmptyInputError);

  Tensor tie = Tensor::from_values({3, 1}, {5, 1, 5}, true);
  backward(sum(pool_points(tie, PoolKind::Max)));
  CHECK(tie.grad()[0] == 1.0);
  CHECK(tie.grad()[2] == 0.0);

  Tensor r = Tensor::from_values({40, 6}, normals(240, 12));
  Tensor mx = pool_points(r, PoolKind::Max), av = pool_points(r, PoolKind::Avg);
  for (std::size_t c = 0; c < 6; ++c) CHECK(mx.at(0, c) >= av.at(0, c));

  Tensor g = Tensor::from_values({8, 3}, normals(24, 13));
  Tensor w = Tensor::from_values({2, 3}, normals(6, 14));
  for (auto k : {PoolKind::Max, PoolKind::Avg})
    CHECK(grad_rel_error({g}, [&](const auto& in) { return sum(mul(pool_groups(in[0], 2, k), w)); }) < 1e-4);
}

TEST_CASE("softmax cross entropy") {
  const std::size_t labels[] = {0, 1, 2};
  CHECK(softmax_cross_entropy(Tensor::zeros({3, 4}), labels).item() == doctest::Approx(std::log(4.0)));
  std::vector<double> v(12, 0.0);
  for (std::size_t i = 0; i < 3; ++i) v[i * 4 + labels[i]] = 20.0;
  CHECK(softmax_cross_entropy(Tensor::from_values({3, 4}, v), labels).item() < 1e-7);
  const std::size_t bad[] = {4};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::zeros({1, 4}), bad), IndexError);
  const std::size_t l5[] = {4, 0, 2};
  Tensor z = Tensor::from_values({3, 5}, normals(15, 15));
  CHECK(grad_rel_error({z}, [&](const auto& in) { return softmax_cross_entropy(in[0], l5); }) < 1e-5);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_values({2, 3}, normals(6, 16), true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor a = Tensor::from_values({2, 3}, normals(6, 17));
  Tensor w = Tensor::from_values({3, 1}, normals(3, 18), true);
  backward(sum(matmul(a, w)));
  for (std::size_t k = 0; k < 3; ++k) CHECK(w.grad()[k] == doctest::Approx(a.at(0, k) + a.at(1, k)));

  CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("determinism") {
  auto run = [] {
    Tensor a = Tensor::from_values({7, 5}, normals(35, 19), true);
    Tensor b = Tensor::from_values({5, 4}, normals(20, 20), true);
    BatchNormStats st(4);
    Tensor y = batch_norm(matmul(a, b), Tensor::full({4}, 1.0), Tensor::zeros({4}), st, Mode::Train);
    backward(mean(mul(hardtanh(y), y)));
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("tape order and single visit") {
  Tensor x = Tensor::from_values({2, 2}, {1, 2, 3, 4}, true);
  Tensor y = mul(x, x);
  Tensor loss = sum(add(y, y));
  Tape t = Tape::record(loss);
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t.nodes()[i - 1]->id < t.nodes()[i]->id);
  backward(loss);
  CHECK(x.grad()[3] == doctest::Approx(16.0));
}

TEST_CASE("adam and cosine schedule") {
  CHECK(cosine_lr(0, 30, 0.001) == 0.001);
  CHECK(cosine_lr(30, 30, 0.001) == doctest::Approx(0.0).epsilon(1e-15));
  Tensor w = Tensor::scalar(1.0, true);
  backward(mul(w, w));
  std::vector<Tensor> params{w};
  AdamState st;
  adam_step(params, st, 0.1);
  CHECK(std::abs(w.item()) < 1.0);
  CHECK(w.item() == doctest::Approx(0.9));
}

}  // TEST_SUITE
