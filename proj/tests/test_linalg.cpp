#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "vcm/linalg.hpp"

using namespace vcm;
using Catch::Approx;

TEST_CASE("affine basic cases") {
  SECTION("identity map") {
    DenseMatrix w = DenseMatrix::identity(2);
    DenseVector b{0.0, 0.0};
    REQUIRE(affine(w, b, {3.0, 4.0}) == DenseVector{3.0, 4.0});
  }
  SECTION("hand sum") {
    DenseMatrix w(1, 2);
    w.at(0, 0) = 1.0;
    w.at(0, 1) = 1.0;
    REQUIRE(affine(w, {1.0}, {2.0, 3.0}) == DenseVector{6.0});
  }
  SECTION("zero weights pass through bias") {
    DenseMatrix w(2, 2);
    REQUIRE(affine(w, {5.0, 5.0}, {1.0, -7.0}) == DenseVector{5.0, 5.0});
  }
  SECTION("dimension mismatch names both shapes") {
    DenseMatrix w(2, 3);
    try {
      affine(w, {0.0, 0.0}, {1.0, 2.0});
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("2x3") != std::string::npos);
      REQUIRE(msg.find("dim 2") != std::string::npos);
    }
  }
}

TEST_CASE("tanh activation") {
  REQUIRE(tanh_activation({0.0, 0.0}) == DenseVector{0.0, 0.0});
  // odd function
  RngStream rng(5);
  for (int i = 0; i < 100; ++i) {
    const double x = 4.0 * (rng.next_double() - 0.5);
    REQUIRE(tanh_activation({x})[0] == Approx(-tanh_activation({-x})[0]).margin(0));
  }
  // saturation
  REQUIRE(tanh_activation({20.0})[0] == Approx(1.0).margin(1e-8));
  // outputs in (-1, 1)
  for (double v : tanh_activation({-50.0, 50.0, 3.0})) {
    REQUIRE(v > -1.0 - 1e-16);
    REQUIRE(v < 1.0 + 1e-16);
  }
}

TEST_CASE("softmax basics and invariants") {
  SECTION("uniform on equal logits") {
    const DenseVector p = softmax({0.0, 0.0, 0.0});
    for (double v : p) REQUIRE(v == Approx(1.0 / 3).epsilon(1e-14));
  }
  SECTION("large equal logits stay stable") {
    const DenseVector p = softmax({1000.0, 1000.0});
    REQUIRE(p[0] == Approx(0.5).epsilon(1e-14));
    REQUIRE(p[1] == Approx(0.5).epsilon(1e-14));
  }
  SECTION("hand value: [ln2, 0] -> [2/3, 1/3]") {
    const DenseVector p = softmax({std::log(2.0), 0.0});
    REQUIRE(p[0] == Approx(2.0 / 3).epsilon(1e-12));
    REQUIRE(p[1] == Approx(1.0 / 3).epsilon(1e-12));
  }
  SECTION("empty input throws") { REQUIRE_THROWS_AS(softmax({}), ShapeError); }

  SECTION("simplex point and shift invariance, 200 random instances") {
    RngStream rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t dim = 1 + rng.next_below(40);
      DenseVector logits(dim);
      for (auto& v : logits) v = 40.0 * (rng.next_double() - 0.5);
      const DenseVector p = softmax(logits);
      double sum = 0.0;
      for (double v : p) {
        REQUIRE(v > 0.0);
        sum += v;
      }
      REQUIRE(std::abs(sum - 1.0) < 1e-12);

      const double shift = 100.0 * (rng.next_double() - 0.5);
      DenseVector shifted = logits;
      for (auto& v : shifted) v += shift;
      const DenseVector q = softmax(shifted);
      for (std::size_t i = 0; i < dim; ++i) {
        REQUIRE(std::abs(p[i] - q[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("dropout semantics") {
  RngStream rng(23);
  const DenseVector x{1.0, 2.0, 3.0};
  SECTION("inference is the identity") {
    REQUIRE(dropout(x, 0.5, rng, false) == x);
  }
  SECTION("rate 0 is the identity in training") {
    REQUIRE(dropout(x, 0.0, rng, true) == x);
  }
  SECTION("rate >= 1 or negative rejected") {
    REQUIRE_THROWS_AS(dropout(x, 1.0, rng, true), ConfigError);
    REQUIRE_THROWS_AS(dropout(x, -0.1, rng, true), ConfigError);
  }
  SECTION("inverted scaling keeps the mean at rate 0.5") {
    // sum of surviving entries / n ~ 1 with binomial sd sqrt(p(1-p))*2/sqrt(n)
    const std::size_t n = 100000;
    DenseVector ones(n, 1.0);
    const DenseVector d = dropout(ones, 0.5, rng, true);
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    const double sd = 2.0 * std::sqrt(0.25 / n);  // sd of the scaled survivor mean
    REQUIRE(std::abs(mean - 1.0) < 3.0 * sd);
    // entries are either 0 or exactly 2
    for (double v : d) REQUIRE((v == 0.0 || v == 2.0));
  }
}
