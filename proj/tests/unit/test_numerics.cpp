#include <cmath>
#include <numeric>
#include <vector>

#include "support.hpp"
#include "tesu/ops.hpp"
#include "tesu/optim.hpp"
#include "tesu/rng.hpp"

using namespace tesu;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, bool grad = false) {
  std::vector<Real> v(r * c);
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return Tensor::from({r, c}, std::move(v), grad);
}

}  // namespace

TEST_CASE("matmul by identity returns the operand") {
  Rng rng(1);
  const Tensor x = random_matrix(2, 3, rng);
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor y = matmul(eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("matmul hand arithmetic") {
  const Tensor y = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  REQUIRE(y.shape() == Shape{1, 1});
  CHECK(y.item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
    const std::string what = e.what();
    CHECK(what.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax rows") {
  const Tensor u = softmax_rows(Tensor::zeros({1, 4}));
  for (Real p : u.data()) CHECK(p == doctest::Approx(0.25));

  const Tensor big = softmax_rows(Tensor::from({1, 2}, {1000, 0}));
  CHECK(all_finite(big));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] == doctest::Approx(0.0));

  Rng rng(2);
  const Tensor s = softmax_rows(random_matrix(5, 7, rng));
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(s.at(i, j) >= 0);
      total += s.at(i, j);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax rejects non-finite input") {
  CHECK_KIND(softmax_rows(Tensor::from({1, 2}, {std::nan(""), 0})), ErrorKind::kInvalidArgument);
}

TEST_CASE("layer_norm") {
  const Tensor ones = Tensor::full({2}, 1), zeros = Tensor::zeros({2});
  SUBCASE("constant row maps to zeros") {
    const Tensor y = layer_norm(Tensor::full({1, 2}, 3.5), ones, zeros);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("normalized row is unchanged as eps vanishes") {
    const Tensor y = layer_norm(Tensor::from({1, 2}, {1, -1}), ones, zeros, Real(1e-12));
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(-1.0));
  }
  SUBCASE("single column is rejected") {
    CHECK_KIND(layer_norm(Tensor::zeros({2, 1}), Tensor::full({1}, 1), Tensor::zeros({1})),
               ErrorKind::kDimension);
  }
  SUBCASE("rows come out standardized") {
    Rng rng(3);
    const Tensor y = layer_norm(random_matrix(6, 16, rng), Tensor::full({16}, 1), Tensor::zeros({16}));
    for (std::size_t i = 0; i < 6; ++i) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 16; ++j) mu += y.at(i, j);
      mu /= 16.0;
      for (std::size_t j = 0; j < 16; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
      var /= 16.0;
      CHECK(std::abs(mu) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("masked cross entropy identities") {
  Rng rng(4);
  const std::vector<int> targets = {0, 3, 2, 1};

  SUBCASE("full mask equals plain cross entropy bitwise") {
    const Tensor logits = random_matrix(4, 5, rng);
    const std::vector<std::uint8_t> mask(4, 1);
    CHECK(masked_cross_entropy(logits, targets, mask).item() == cross_entropy(logits, targets).item());
  }
  SUBCASE("uniform logits give ln V") {
    const std::vector<std::uint8_t> mask = {0, 1, 1, 0};
    CHECK(std::abs(masked_cross_entropy(Tensor::zeros({4, 7}), targets, mask).item() - std::log(7.0)) < 1e-6);
  }
  SUBCASE("masked-out row has zero loss and zero gradient") {
    Tensor logits = random_matrix(2, 5, rng, true);
    const std::vector<int> t2 = {4, 1};
    const std::vector<std::uint8_t> mask = {1, 0};
    Tape tape;
    Real loss;
    {
      TapeGuard guard(tape);
      const Tensor l = masked_cross_entropy(logits, t2, mask);
      loss = l.item();
      tape.backward(l);
    }
    const Tensor row0 = slice_rows(logits.detach(), 0, 1);
    const std::vector<int> t0 = {4};
    CHECK(loss == cross_entropy(row0, t0).item());
    for (std::size_t j = 0; j < 5; ++j) CHECK(logits.grad()[5 + j] == 0);
  }
  SUBCASE("empty mask is an empty-supervision error") {
    const std::vector<std::uint8_t> mask(4, 0);
    CHECK_KIND(masked_cross_entropy(Tensor::zeros({4, 5}), targets, mask), ErrorKind::kEmptySupervision);
  }
}

TEST_CASE("ops record only when some input requires grad") {
  Tape tape;
  TapeGuard guard(tape);
  const Tensor frozen = Tensor::full({2, 2}, 1);
  (void)matmul(frozen, frozen);
  CHECK(tape.size() == 0);
  const Tensor live = Tensor::full({2, 2}, 1, true);
  (void)matmul(frozen, live);
  CHECK(tape.size() == 1);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p = {Tensor::from({3}, {1, -2, 3}, true)};
    auto st = adam_init(p);
    zero_grads(p);
    adam_step(p, st, 0.1);
    CHECK(p[0].data()[0] == 1);
    CHECK(p[0].data()[1] == -2);
    CHECK(p[0].data()[2] == 3);
  }
  SUBCASE("bias-corrected first step has magnitude lr") {
    std::vector<Tensor> p = {Tensor::from({1}, {0.5}, true)};
    auto st = adam_init(p);
    p[0].grad()[0] = Real(0.3);
    adam_step(p, st, 0.01);
    // independent scalar recurrence: m_hat = g, v_hat = g^2
    const double expected = 0.5 - 0.01 * 0.3 / (0.3 + 1e-8);
    CHECK(p[0].data()[0] == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("x^2 from 1 with lr 0.1 matches an independent recurrence") {
    std::vector<Tensor> p = {Tensor::from({1}, {1.0}, true)};
    auto st = adam_init(p);
    double x = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 100; ++t) {
      p[0].grad()[0] = static_cast<Real>(2.0 * p[0].data()[0]);
      adam_step(p, st, 0.1);
      const double g = 2.0 * x;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      x -= 0.1 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::abs(x) < 0.05);
    CHECK(std::abs(p[0].data()[0]) < 0.05);
    CHECK(p[0].data()[0] == doctest::Approx(x).epsilon(1e-3));
  }
  SUBCASE("shape drift is a state error") {
    std::vector<Tensor> p = {Tensor::zeros({2}, true)};
    auto st = adam_init(p);
    std::vector<Tensor> q = {Tensor::zeros({3}, true)};
    CHECK_KIND(adam_step(q, st, 0.1), ErrorKind::kState);
  }
}

TEST_CASE("segments confine attention") {
  Rng rng(5);
  const Tensor qkv = random_matrix(5, 12, rng);
  const Segments two = segments_from_lengths(std::vector<std::size_t>{2, 3});
  const Tensor joint = attention(qkv, 2, two, false);
  const Tensor tail = attention(slice_rows(qkv, 2, 3), 2, single_segment(3), false);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(joint.at(2 + i, j) == doctest::Approx(tail.at(i, j)));
  }
}
