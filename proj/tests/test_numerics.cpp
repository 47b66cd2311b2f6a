#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "kern/grad_check.hpp"
#include "kern/rng.hpp"
#include "kern/tensor.hpp"

using kern::Rng;
using kern::nn::Tensor;
using kern::nn::Tape;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng,
                             bool requires_grad = true) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and orthogonal basis") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto out = kern::nn::matmul(eye, a);
  CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

  auto row = Tensor<double>::from({1, 2}, {1, 0});
  auto col = Tensor<double>::from({2, 1}, {0, 1});
  CHECK(kern::nn::matmul(row, col).item() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_WITH_AS(kern::nn::matmul(a, b),
                       doctest::Contains("[2,3]"), kern::ShapeError);
}

TEST_CASE("matmul gradients vs central differences") {
  Rng rng(42);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto report = kern::nn::grad_check<double>(
      [&] { return kern::nn::sum_all(kern::nn::gelu(kern::nn::matmul(a, b))); },
      {a, b});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("softmax examples") {
  auto sym = kern::nn::softmax(Tensor<double>::from({2}, {0, 0}));
  CHECK(sym.values()[0] == doctest::Approx(0.5).epsilon(1e-12));

  auto big = kern::nn::softmax(Tensor<double>::from({3}, {1000, 1000, 1000}));
  for (double v : big.values()) {
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  // Frozen from a scalar-loop reference computation.
  auto s = kern::nn::softmax(Tensor<double>::from({3}, {1, 2, 3}));
  CHECK(s.values()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(0.24472847105479764).epsilon(1e-12));
  CHECK(s.values()[2] == doctest::Approx(0.6652409557748218).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one on random inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 1 + rng.below_int(5);
    const int cols = 1 + rng.below_int(9);
    auto x = random_tensor({rows, cols}, rng, false);
    auto s = kern::nn::softmax(x);
    for (int r = 0; r < rows; ++r) {
      double total = 0;
      for (int c = 0; c < cols; ++c)
        total += s.values()[static_cast<std::size_t>(r) * cols + c];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(3);
  auto x = random_tensor({2, 5}, rng);
  auto w = random_tensor({2, 5}, rng, false);
  auto report = kern::nn::grad_check<double>(
      [&] { return kern::nn::sum_all(kern::nn::mul(kern::nn::softmax(x), w)); },
      {x});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gelu examples") {
  auto z = kern::nn::gelu(Tensor<double>::scalar(0.0));
  CHECK(z.item() == 0.0);

  auto big = kern::nn::gelu(Tensor<double>::scalar(100.0));
  CHECK(big.item() == doctest::Approx(100.0).epsilon(1e-12));

  // Independent scalar oracle for the tanh approximation, plus the frozen
  // value it produced.
  const double x = 1.0;
  const double oracle =
      0.5 * x *
      (1.0 + std::tanh(std::sqrt(2.0 / 3.14159265358979323846) *
                       (x + 0.044715 * x * x * x)));
  auto one = kern::nn::gelu(Tensor<double>::scalar(1.0));
  CHECK(one.item() == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(one.item() == doctest::Approx(0.8411919906082768).epsilon(1e-12));
}

TEST_CASE("gelu shape on [-5,5] grid") {
  // GELU is not monotone left of its minimum near x = -0.75; the tanh
  // approximation shares that dip. Check monotonicity right of it and the
  // bounded dip on the left.
  std::vector<double> grid;
  for (double x = -5.0; x <= 5.0; x += 0.01) grid.push_back(x);
  auto y = kern::nn::gelu(Tensor<double>::from(
      {static_cast<int>(grid.size())}, std::vector<double>(grid)));
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i - 1] >= -0.5) CHECK(y.values()[i] >= y.values()[i - 1]);
    CHECK(y.values()[i] >= -0.2);
    if (grid[i] >= 0.0) CHECK(y.values()[i] <= grid[i] + 1e-12);
  }
}

TEST_CASE("layer_norm examples and gradient") {
  auto gain = Tensor<double>::from({3}, {1, 1, 1}, true);
  auto bias = Tensor<double>::from({3}, {0, 0, 0}, true);

  auto constant = Tensor<double>::from({1, 3}, {5, 5, 5});
  auto out = kern::nn::layer_norm(constant, gain, bias);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

  auto gain2 = Tensor<double>::from({2}, {1, 1});
  auto bias2 = Tensor<double>::from({2}, {0, 0});
  auto pm = kern::nn::layer_norm(Tensor<double>::from({1, 2}, {1, -1}), gain2,
                                 bias2, 1e-12);
  CHECK(pm.values()[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pm.values()[1] == doctest::Approx(-1.0).epsilon(1e-9));

  Rng rng(11);
  auto x = random_tensor({4, 6}, rng);
  auto g6 = random_tensor({6}, rng);
  auto b6 = random_tensor({6}, rng);
  auto report = kern::nn::grad_check<double>(
      [&] {
        return kern::nn::sum_all(
            kern::nn::gelu(kern::nn::layer_norm(x, g6, b6, 1e-12)));
      },
      {x, g6, b6});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("embedding lookup gather and additive scatter") {
  auto table = Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  auto out = kern::nn::embedding_lookup(table, {0, 0});
  CHECK(out.values() == std::vector<double>{1, 2, 1, 2});

  {
    Tape<double> tape;
    auto looked = kern::nn::embedding_lookup(table, {0, 0});
    auto loss = kern::nn::sum_all(looked);
    tape.backward(loss);
  }
  CHECK(table.grad()[0] == 2.0);
  CHECK(table.grad()[1] == 2.0);
  CHECK(table.grad()[2] == 0.0);

  CHECK_THROWS_WITH_AS(kern::nn::embedding_lookup(table, {3}),
                       doctest::Contains("3"), kern::IndexError);

  table.zero_grad();
  Rng rng(5);
  auto w = random_tensor({4, 2}, rng, false);
  auto report = kern::nn::grad_check<double>(
      [&] {
        return kern::nn::sum_all(
            kern::nn::mul(kern::nn::embedding_lookup(table, {2, 0, 2, 1}), w));
      },
      {table});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("cross entropy examples") {
  auto uniform = kern::nn::cross_entropy(Tensor<double>::from({1, 2}, {0, 0}), {0});
  CHECK(uniform.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto saturated = kern::nn::cross_entropy(
      Tensor<double>::from({1, 3}, {1e4, 0, 0}), {0});
  CHECK(saturated.item() == doctest::Approx(0.0).epsilon(1e-9));

  // Frozen from a scalar log-sum-exp reference.
  auto ce = kern::nn::cross_entropy(
      Tensor<double>::from({1, 3}, {0.3, -1.2, 2.0}), {2});
  CHECK(ce.item() == doctest::Approx(0.20167124495279065).epsilon(1e-10));

  CHECK_THROWS_AS(
      kern::nn::cross_entropy(Tensor<double>::zeros({1, 3}), {3}),
      kern::IndexError);
}

TEST_CASE("cross entropy positive unless point mass") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor({3, 4}, rng, false);
    auto loss = kern::nn::cross_entropy(logits, {0, 1, 2});
    CHECK(loss.item() > 0.0);
  }
}

TEST_CASE("cross entropy gradient") {
  Rng rng(13);
  auto logits = random_tensor({3, 5}, rng);
  auto report = kern::nn::grad_check<double>(
      [&] { return kern::nn::cross_entropy(logits, {1, 4, 0}); }, {logits});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("bce with logits matches scalar oracle and gradient") {
  Rng rng(21);
  auto z = random_tensor({4}, rng);
  std::vector<double> y = {1, 0, 1, 0};

  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    const double zi = z.values()[static_cast<std::size_t>(i)];
    const double p = 1.0 / (1.0 + std::exp(-zi));
    expect += -(y[static_cast<std::size_t>(i)] * std::log(p) +
                (1 - y[static_cast<std::size_t>(i)]) * std::log(1 - p));
  }
  expect /= 4;
  auto loss = kern::nn::bce_with_logits(z, y);
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-10));

  auto report = kern::nn::grad_check<double>(
      [&] { return kern::nn::bce_with_logits(z, y); }, {z});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("elementwise and structural op gradients") {
  Rng rng(31);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  auto bias = random_tensor({4}, rng);

  auto report = kern::nn::grad_check<double>(
      [&] {
        auto h = kern::nn::add(kern::nn::mul(a, b), a);
        h = kern::nn::add_bias(h, bias);
        h = kern::nn::scale(h, 0.7);
        auto t = kern::nn::transpose(h);
        auto parts = kern::nn::split_heads(h, 2);
        auto merged = kern::nn::merge_heads(parts);
        return kern::nn::add(kern::nn::sum_all(t),
                             kern::nn::sum_all(kern::nn::sigmoid(merged)));
      },
      {a, b, bias});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("concat_cols and split round trip") {
  Rng rng(33);
  auto a = random_tensor({2, 3}, rng, false);
  auto b = random_tensor({2, 5}, rng, false);
  auto cat = kern::nn::concat_cols<double>({a, b});
  CHECK(cat.shape() == std::vector<int>{2, 8});
  auto back_a = kern::nn::slice_cols(cat, 0, 3);
  auto back_b = kern::nn::slice_cols(cat, 3, 5);
  CHECK(back_a.values() == a.values());
  CHECK(back_b.values() == b.values());
}

TEST_CASE("dropout p=0 is the identity, p>0 scales by kept mask") {
  Rng rng(41);
  auto x = random_tensor({5, 5}, rng, false);
  auto same = kern::nn::dropout(x, 0.0, nullptr);
  CHECK(same.node() == x.node());

  Rng drop_rng(1);
  auto dropped = kern::nn::dropout(x, 0.5, &drop_rng);
  int zeros = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (dropped.values()[i] == 0.0)
      ++zeros;
    else
      CHECK(dropped.values()[i] == doctest::Approx(2.0 * x.values()[i]));
  }
  CHECK(zeros > 0);
  CHECK(zeros < 25);
}

TEST_CASE("tape: backward twice without reset is an error") {
  auto x = Tensor<double>::from({1}, {2.0}, true);
  Tape<double> tape;
  auto y = kern::nn::scale(x, 3.0);
  tape.backward(y);
  CHECK(x.grad()[0] == 3.0);
  CHECK_THROWS_AS(tape.backward(y), kern::VerifyError);
  tape.reset();
  x.zero_grad();
  auto y2 = kern::nn::scale(x, 3.0);
  tape.backward(y2);
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("gradient accumulation is additive over reuse") {
  auto x = Tensor<double>::from({1}, {1.5}, true);
  Tape<double> tape;
  // x used three times: d/dx (x + x*x + x) = 2 + 2x = 5.
  auto y = kern::nn::add(kern::nn::add(x, kern::nn::mul(x, x)), x);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0 + 2.0 * 1.5).epsilon(1e-12));
}

TEST_CASE("forward with fixed seed is bit-deterministic") {
  const auto run = [] {
    Rng rng(123);
    Rng drop(9);
    std::vector<float> vals(24);
    for (auto& v : vals) v = static_cast<float>(rng.normal());
    auto x = Tensor<float>::from({4, 6}, std::move(vals), false);
    auto g = Tensor<float>::full({6}, 1.0f);
    auto b = Tensor<float>::zeros({6});
    auto y = kern::nn::layer_norm(x, g, b, 1e-12f);
    y = kern::nn::gelu(y);
    y = kern::nn::dropout(y, 0.0, &drop);
    y = kern::nn::softmax(y);
    return y.values();
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("finiteness checks catch NaN when enabled") {
  const bool saved = kern::nn::finite_checks_enabled();
  kern::nn::finite_checks_enabled() = true;
  CHECK_THROWS_AS(
      Tensor<double>::from({1}, {std::numeric_limits<double>::quiet_NaN()}),
      kern::VerifyError);
  auto big = Tensor<double>::from({1}, {1e308});
  CHECK_THROWS_AS(kern::nn::mul(big, big), kern::VerifyError);
  kern::nn::finite_checks_enabled() = saved;
}

TEST_CASE("grad_check on a linear function is near-exact") {
  auto x = Tensor<double>::from({3}, {0.5, -1.0, 2.0}, true);
  auto w = Tensor<double>::from({3}, {3.0, 1.0, -2.0});
  auto report = kern::nn::grad_check<double>(
      [&] { return kern::nn::sum_all(kern::nn::mul(x, w)); }, {x});
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("grad_check rejects non-finite functions") {
  auto x = Tensor<double>::from({1}, {2.0}, true);
  const bool saved = kern::nn::finite_checks_enabled();
  kern::nn::finite_checks_enabled() = false;
  CHECK_THROWS_AS(kern::nn::grad_check<double>(
                      [&] {
                        auto inf = Tensor<double>::full({1}, 1e308);
                        return kern::nn::mul(kern::nn::mul(inf, inf), x);
                      },
                      {x}),
                  kern::VerifyError);
  kern::nn::finite_checks_enabled() = saved;
}
