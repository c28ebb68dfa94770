#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rescal/analysis.hpp"
#include "rescal/calib_math.hpp"
#include "rescal/errors.hpp"
#include "rescal/gradcheck.hpp"
#include "rescal/ops.hpp"
#include "support.hpp"

using namespace rescal;

namespace {

constexpr CdfMode kModes[] = {CdfMode::exact, CdfMode::sigmoid_approx, CdfMode::tanh_approx};

double relu(double a) { return a > 0.0 ? a : 0.0; }

}  // namespace

TEST_SUITE("calib_math") {
  TEST_CASE("cdf reference values") {
    for (CdfMode m : kModes) CHECK(std_normal_cdf(0.0, m) == 0.5);
    CHECK(std::abs(std_normal_cdf(1.0, CdfMode::exact) - 0.8413447461) < 1e-9);
    for (double x = -4.0; x <= 4.0; x += 0.01) {
      REQUIRE(std::abs(std_normal_cdf(x, CdfMode::exact) - oracle::normal_cdf(x)) < 1e-14);
    }
    CHECK(std_normal_cdf(13.0, CdfMode::exact) == 1.0);
    CHECK(std_normal_cdf(-13.0, CdfMode::tanh_approx) == 0.0);
    for (CdfMode m : kModes) {
      for (double x : {-1e300, -40.0, -12.5, 12.5, 40.0, 1e300}) {
        const double p = std_normal_cdf(x, m);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
  }

  TEST_CASE("approximation sup errors over the dense grid") {
    // independent sweep: reference values from the series oracle
    double sig = 0.0, tnh = 0.0;
    for (long k = 0; k <= 16000; ++k) {
      const double x = -8.0 + static_cast<double>(k) * 1e-3;
      const double ref = std::abs(x) <= 6.0 ? oracle::normal_cdf(x) : 0.5 * std::erfc(-x / std::sqrt(2.0));
      sig = std::max(sig, std::abs(std_normal_cdf(x, CdfMode::sigmoid_approx) - ref));
      tnh = std::max(tnh, std::abs(std_normal_cdf(x, CdfMode::tanh_approx) - ref));
    }
    CHECK(sig <= 0.011);
    CHECK(tnh <= 1e-3);
    CHECK(std::abs(cdf_sup_error(CdfMode::sigmoid_approx) - sig) < 1e-12);
    CHECK(std::abs(cdf_sup_error(CdfMode::tanh_approx) - tnh) < 1e-12);
    CHECK(cdf_sup_error(CdfMode::exact) == 0.0);
  }

  TEST_CASE("pdf") {
    CHECK(std::abs(std_normal_pdf(0.0) - 0.3989422804) < 1e-9);
    CHECK(std::abs(std_normal_pdf(1.0) - 0.2419707245) < 1e-9);
    CHECK(std::abs(std_normal_pdf(1.0) - oracle::normal_pdf(1.0)) < 1e-15);
    for (double x = 0.0; x < 9.0; x += 0.37) CHECK(std_normal_pdf(x) == std_normal_pdf(-x));
  }

  TEST_CASE("cdf derivative of each mode matches finite differences of that mode") {
    for (CdfMode m : kModes) {
      for (double x = -5.0; x <= 5.0; x += 0.173) {
        const double h = 1e-5;
        const double num = (std_normal_cdf(x + h, m) - std_normal_cdf(x - h, m)) / (2 * h);
        REQUIRE(std::abs(num - std_normal_cdf_derivative(x, m)) < 1e-9);
      }
    }
  }

  TEST_CASE("calibration weight examples") {
    CHECK(calibration_weight(0.7, 0.7, 3.0) == 0.5);
    CHECK(std::abs(calibration_weight(1.5, 0.5, 1.0) - 0.1586552539) < 1e-9);
    CHECK(std::abs(calibration_weight(1.5, 0.5, 1.0) - (1.0 - oracle::normal_cdf(1.0))) < 1e-14);
    CHECK_THROWS_AS(calibration_weight(1.0, 0.0, 0.0), DomainError);
    CHECK_THROWS_AS(calibration_weight(1.0, 0.0, -1.0), DomainError);
    CHECK_THROWS_AS(calibration_value(1.0, 0.0, std::nan("")), DomainError);
  }

  TEST_CASE("calibration value examples") {
    CHECK(calibration_value(0.0, 3.0, 0.2) == 0.0);
    CHECK(calibration_value(2.0, 2.0, 1.0) == 1.0);
    CHECK(std::abs(calibration_value(-1.0, 0.0, 1.0) - (-0.1586552539)) < 1e-9);
  }

  TEST_CASE("weight bounds, symmetry and monotonicity") {
    Rng rng(17);
    for (CdfMode m : kModes) {
      for (int i = 0; i < 2000; ++i) {
        const double mu = rng.normal(0.0, 3.0);
        const double sigma = std::exp(rng.uniform(-4.0, 3.0));
        const double d = std::abs(rng.normal(0.0, 5.0));
        const double up = calibration_weight(mu + d, mu, sigma, m);
        const double down = calibration_weight(mu - d, mu, sigma, m);
        REQUIRE(up >= 0.0);
        REQUIRE(up <= 0.5);
        REQUIRE(down <= 0.5);
        REQUIRE(std::abs(up - down) <= 1e-12);
      }
      for (double mu : {-1.0, 0.0, 2.5}) {
        double prev_up = 0.5, prev_down = 0.5;
        for (double d = 0.0; d < 10.0; d += 0.01) {
          const double up = calibration_weight(mu + d, mu, 1.3, m);
          const double down = calibration_weight(mu - d, mu, 1.3, m);
          REQUIRE(up <= prev_up);
          REQUIRE(down <= prev_down);
          prev_up = up;
          prev_down = down;
        }
      }
    }
  }

  TEST_CASE("complement identity and GELU agreement") {
    Rng rng(23);
    for (CdfMode m : kModes) {
      for (int i = 0; i < 2000; ++i) {
        const double mu = rng.normal(0.0, 2.0);
        const double sigma = rng.uniform(0.1, 3.0);
        const double a = rng.normal(mu, 3.0 * sigma);
        const double x = (a - mu) / sigma;
        if (a > mu) {
          REQUIRE(std::abs(calibration_weight(a, mu, sigma, m) + std_normal_cdf(x, m) - 1.0) <= 1e-12);
        } else {
          REQUIRE(calibration_value(a, mu, sigma, m) == a * std_normal_cdf(x, m));
        }
        REQUIRE(std::abs(calibration_value(a, mu, sigma, m)) <= std::abs(a) / 2.0);
      }
    }
  }

  TEST_CASE("gclu values") {
    for (CdfMode m : kModes) {
      CHECK(gclu(0.0, m) == 0.0);
      for (double a = -9.0; a <= 9.0; a += 0.0625) {
        REQUIRE(gclu(a, m) == relu(a) + calibration_value(a, 0.0, 1.0, m));
      }
    }
    CHECK(std::abs(gclu(1.0) - 1.1586552539) < 1e-9);
    CHECK(std::abs(gclu(6.0) - 6.0) < 1e-6);
    CHECK(std::abs(gclu(-0.5) - (-0.5 * oracle::normal_cdf(-0.5))) < 1e-15);
    CHECK(std::abs(gclu(2.0) - 2.0 * (2.0 - oracle::normal_cdf(2.0))) < 1e-14);
  }

  TEST_CASE("gclu sandwich and continuity") {
    for (CdfMode m : kModes) {
      for (double a = -20.0; a <= 20.0; a += 0.01) {
        const double g = gclu(a, m);
        if (a >= 0) {
          REQUIRE(g >= relu(a));
          REQUIRE(g <= relu(a) + std::abs(a) / 2.0);
        } else {
          REQUIRE(g >= a / 2.0);
          REQUIRE(g <= 0.0);
        }
      }
      for (double eps : {1e-6, 1e-9, 1e-12}) CHECK(std::abs(gclu(eps, m) - gclu(-eps, m)) <= 2 * eps);
    }
  }

  TEST_CASE("gclu derivative") {
    CHECK(gclu_derivative(0.0) == 0.5);
    CHECK(std::abs(gclu_derivative(1.0) - 0.9166845294) < 1e-8);
    CHECK(std::abs(gclu_derivative(1.0) - (2.0 - oracle::normal_cdf(1.0) - oracle::normal_pdf(1.0))) < 1e-14);
    Rng rng(29);
    for (CdfMode m : kModes) {
      for (int i = 0; i < 50; ++i) {
        const double mag = rng.uniform(0.1, 5.0);
        const double a = rng.bernoulli(0.5) ? mag : -mag;
        const double h = 1e-5;
        const double num = (gclu(a + h, m) - gclu(a - h, m)) / (2 * h);
        const double ana = gclu_derivative(a, m);
        REQUIRE(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}) < 1e-6);
      }
    }
  }

  TEST_CASE("finite-difference reference points") {
    Tensor a = Tensor::create({1}, {0.3});
    CHECK(finite_diff_check([](const Tensor& x) { return gclu(x, CdfMode::exact); }, a).max_rel_error < 1e-6);

    Tensor f = Tensor::create({1, 1, 1, 1}, {1.2});
    Tensor mu = Tensor::create({1, 1}, {0.1});
    Tensor sigma = Tensor::create({1, 1}, {0.8});
    const auto r = finite_diff_check_params([&] { return calibration_map(f, mu, sigma, CdfMode::exact); },
                                            {f, mu, sigma});
    CHECK_FALSE(r.excluded);
    CHECK(r.max_rel_error < 1e-6);
  }

  TEST_CASE("partials agree with the closed forms") {
    const double a = 1.2, mu = 0.1, sigma = 0.8;
    const double x = (a - mu) / sigma;
    const auto p = calibration_value_partials(a, mu, sigma);
    const double pdf = oracle::normal_pdf(x);
    CHECK(std::abs(p.value - a * (1.0 - oracle::normal_cdf(x))) < 1e-14);
    CHECK(std::abs(p.d_a - ((1.0 - oracle::normal_cdf(x)) - a * pdf / sigma)) < 1e-14);
    CHECK(std::abs(p.d_mu - a * pdf / sigma) < 1e-14);
    CHECK(std::abs(p.d_sigma - a * pdf * x / sigma) < 1e-14);
  }

  TEST_CASE("tensor calibration map broadcasts mu and sigma per sample and channel") {
    Rng rng(31);
    Tensor f = fixture::normal({2, 3, 2, 2}, rng);
    Tensor mu = fixture::normal({2, 3}, rng);
    Tensor sigma = fixture::uniform({2, 3}, rng, 0.5, 2.0);
    Tensor c = calibration_map(f, mu, sigma, CdfMode::exact);
    Tensor w = calibration_weights(f, mu, sigma, CdfMode::exact);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::size_t g = i / 4;
      CHECK(c.data()[i] == calibration_value(f.data()[i], mu.data()[g], sigma.data()[g]));
      CHECK(w.data()[i] == calibration_weight(f.data()[i], mu.data()[g], sigma.data()[g]));
    }
    CHECK_THROWS_AS(calibration_map(f, Tensor::zeros({2, 2}), Tensor::full({2, 2}, 1.0), CdfMode::exact),
                    ShapeError);
  }

  TEST_CASE("mode names round trip") {
    for (CdfMode m : kModes) CHECK(parse_cdf_mode(cdf_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_cdf_mode("probit"), ConfigError);
  }
}
