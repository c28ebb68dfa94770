#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rescal/calib_math.hpp"
#include "rescal/errors.hpp"
#include "rescal/gradcheck.hpp"
#include "rescal/grad_targets.hpp"
#include "rescal/ops.hpp"
#include "rescal/rc_layer.hpp"
#include "support.hpp"

using namespace rescal;

namespace {

RcLayerConfig config(std::size_t c, RcVariant v = RcVariant::three_fc, std::size_t r = 4) {
  RcLayerConfig cfg;
  cfg.channels = c;
  cfg.variant = v;
  cfg.reduction = r;
  cfg.seed = 1234;
  return cfg;
}

void randomize(RcLayer& layer, Rng& rng, double stddev) {
  std::vector<NamedParam> params;
  layer.collect_params("", params);
  for (auto& p : params)
    for (double& v : p.tensor.mutable_data()) v = rng.normal(0.0, stddev);
}

}  // namespace

TEST_SUITE("rc_layer") {
  TEST_CASE("fresh layer predicts the standard normal for any input") {
    for (RcVariant v : {RcVariant::two_fc, RcVariant::three_fc}) {
      RcLayer layer(config(16, v));
      Rng rng(2);
      Tensor x = fixture::normal({3, 16, 4, 4}, rng, 5.0);
      auto p = layer.predict_params(x);
      for (double m : p.mu.data()) CHECK(m == 0.0);
      for (double s : p.sigma.data()) CHECK(std::abs(s - (1.0 + kSigmaFloor)) < 1e-15);
      Tensor y = layer.forward(x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = x.data()[i];
        CHECK(std::abs(y.data()[i] - calibration_value(a, 0.0, 1.0 + kSigmaFloor)) < 1e-12);
        const double gelu_form = gclu(a) - (a > 0 ? a : 0.0);
        // the floor shifts x by a relative 1e-4, which only stays inside 1e-3
        // relative for |x| <= 3; past that the absolute gap is below 1e-5
        if (std::abs(a) <= 3.0)
          CHECK(std::abs(y.data()[i] - gelu_form) <= 1e-3 * std::abs(gelu_form));
        else
          CHECK(std::abs(y.data()[i] - gelu_form) <= 1e-5);
      }
    }
  }

  TEST_CASE("parameter counts") {
    CHECK(rc_param_count(config(16)) == 228);
    CHECK(rc_param_count(config(16, RcVariant::two_fc)) == 544);
    RcLayer two(config(8, RcVariant::two_fc));
    CHECK(two.mean_weight().size() + two.std_weight().size() == 128);
    CHECK(two.param_count() == 128 + 16);
    for (std::size_t c : {8u, 16u, 32u, 64u}) {
      for (std::size_t r : {2u, 4u, 8u, 16u}) {
        RcLayer layer(config(c, RcVariant::three_fc, r));
        const std::size_t h = std::max<std::size_t>(1, c / r);
        CHECK(layer.reduce_weight().size() + layer.mean_weight().size() + layer.std_weight().size() == 3 * c * h);
        CHECK(layer.param_count() == 3 * c * h + h + 2 * c);
        CHECK(rc_param_count(layer.config()) == layer.param_count());
      }
      RcLayer two_fc(config(c, RcVariant::two_fc));
      CHECK(two_fc.param_count() == 2 * c * c + 2 * c);
    }
    // width floors at one when r exceeds C
    CHECK(rc_hidden_width(config(4, RcVariant::three_fc, 16)) == 1);
  }

  TEST_CASE("same seed gives identical weights") {
    RcLayer a(config(32)), b(config(32));
    CHECK(fixture::to_vector(a.reduce_weight()) == fixture::to_vector(b.reduce_weight()));
    RcLayerConfig other = config(32);
    other.seed = 99;
    RcLayer c(other);
    CHECK(fixture::to_vector(a.reduce_weight()) != fixture::to_vector(c.reduce_weight()));
  }

  TEST_CASE("invalid configurations") {
    CHECK_THROWS_AS(RcLayer(config(0)), ConfigError);
    CHECK_THROWS_AS(RcLayer(config(8, RcVariant::three_fc, 0)), ConfigError);
    RcLayer layer(config(8));
    CHECK_THROWS_AS(layer.forward(Tensor::zeros({1, 4, 2, 2})), ShapeError);
  }

  TEST_CASE("zero descriptor gives a sample-independent prediction") {
    RcLayer layer(config(8));
    Rng rng(5);
    randomize(layer, rng, 0.7);
    auto p = layer.predict_params(Tensor::zeros({3, 8, 2, 2}));
    for (std::size_t n = 1; n < 3; ++n)
      for (std::size_t c = 0; c < 8; ++c) {
        CHECK(p.mu.data()[n * 8 + c] == p.mu.data()[c]);
        CHECK(p.sigma.data()[n * 8 + c] == p.sigma.data()[c]);
      }
    // the mean head sees the reduce bias only
    const double expected = [&] {
      double acc = layer.mean_bias().data()[0];
      for (std::size_t j = 0; j < 2; ++j) acc += layer.mean_weight().data()[j] * layer.reduce_bias().data()[j];
      return acc;
    }();
    CHECK(std::abs(p.mu.data()[0] - expected) < 1e-14);
  }

  TEST_CASE("output properties under random weights") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      RcLayerConfig cfg = config(8, trial % 2 ? RcVariant::two_fc : RcVariant::three_fc, 2);
      cfg.mid_activation = static_cast<MidActivation>(trial % 3);
      RcLayer layer(cfg);
      randomize(layer, rng, 2.0);
      Tensor x = fixture::normal({2, 8, 3, 3}, rng, 3.0);
      auto p = layer.predict_params(x);
      for (double s : p.sigma.data()) REQUIRE(s >= kSigmaFloor);
      Tensor y = layer.forward(x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = x.data()[i], c = y.data()[i];
        REQUIRE(std::abs(c) <= std::abs(a) / 2.0);
        REQUIRE((c == 0.0 || (c > 0) == (a > 0)));
      }
      const Tensor zero_out = layer.forward(Tensor::zeros({2, 8, 3, 3}));
      for (double v : zero_out.data()) REQUIRE(v == 0.0);
    }
  }

  TEST_CASE("gradients w.r.t. features and every weight") {
    for (CdfMode m : {CdfMode::exact, CdfMode::sigmoid_approx, CdfMode::tanh_approx}) {
      const auto r = run_grad_target(GradTarget::rc_layer, m, 100, 3);
      CHECK(r.points_checked == 100);
      CHECK(r.max_rel_error < 1e-4);
    }
    // two_fc with a mid-activation free path and a sigmoid three_fc
    Rng rng(41);
    for (auto variant : {RcVariant::two_fc, RcVariant::three_fc}) {
      RcLayerConfig cfg = config(4, variant, 2);
      cfg.mid_activation = MidActivation::sigmoid;
      RcLayer layer(cfg);
      randomize(layer, rng, 0.2);
      std::vector<NamedParam> params;
      layer.collect_params("", params);
      int checked = 0;
      for (int i = 0; i < 40 && checked < 20; ++i) {
        Tensor x = fixture::normal({2, 4, 2, 2}, rng);
        std::vector<Tensor> wrt{x};
        for (auto& p : params) wrt.push_back(p.tensor);
        const auto res = finite_diff_check_params([&] { return layer.forward(x); }, wrt);
        if (res.excluded) continue;
        ++checked;
        CHECK(res.max_rel_error < 1e-4);
      }
      CHECK(checked == 20);
    }
  }

  TEST_CASE("biases are exempt from weight decay") {
    RcLayer layer(config(16));
    std::vector<NamedParam> params;
    layer.collect_params("rc.", params);
    for (const auto& p : params) {
      const bool is_bias = p.name.ends_with("bias");
      CHECK(p.weight_decay == !is_bias);
    }
  }
}
