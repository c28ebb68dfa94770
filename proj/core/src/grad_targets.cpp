#include "rescal/grad_targets.hpp"

#include <algorithm>
#include <functional>
#include <string>

#include "rescal/errors.hpp"
#include "rescal/gradcheck.hpp"
#include "rescal/model.hpp"
#include "rescal/ops.hpp"
#include "rescal/random.hpp"
#include "rescal/rc_layer.hpp"

namespace rescal {

std::string_view grad_target_name(GradTarget t) {
  switch (t) {
    case GradTarget::gclu:
      return "gclu";
    case GradTarget::weight:
      return "weight";
    case GradTarget::value:
      return "value";
    case GradTarget::rc_layer:
      return "rc_layer";
    case GradTarget::block:
      return "block";
    case GradTarget::model:
      return "model";
  }
  return "gclu";
}

GradTarget parse_grad_target(std::string_view text) {
  for (auto t : {GradTarget::gclu, GradTarget::weight, GradTarget::value, GradTarget::rc_layer, GradTarget::block,
                 GradTarget::model}) {
    if (grad_target_name(t) == text) return t;
  }
  throw ConfigError("unknown gradcheck target '" + std::string(text) +
                    "' (expected gclu|weight|value|rc_layer|block|model)");
}

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  std::vector<double> v(shape_product(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::create(std::move(shape), std::move(v));
}

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_product(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::create(std::move(shape), std::move(v));
}

void randomize(Tensor t, Rng& rng, double stddev) {
  for (double& x : t.mutable_data()) x = rng.normal(0.0, stddev);
}

// A random linear readout keeps the loss from being a plain sum, which would
// hide sign errors that cancel across coordinates. The checker sums it.
Tensor readout(const Tensor& y, const Tensor& coef) { return mul(y, coef); }

GradCheckResult check_once(GradTarget target, CdfMode mode, Rng& rng, const GradCheckOptions& opt) {
  switch (target) {
    case GradTarget::gclu: {
      Tensor x = normal_tensor({16}, rng, 2.0);
      Tensor coef = normal_tensor({16}, rng);
      return finite_diff_check_params([&] { return readout(gclu(x, mode), coef); }, {x}, opt);
    }
    case GradTarget::weight:
    case GradTarget::value: {
      Tensor a = normal_tensor({2, 3, 2, 2}, rng, 1.5);
      Tensor mu = normal_tensor({2, 3}, rng, 0.5);
      Tensor sigma = uniform_tensor({2, 3}, rng, 0.5, 2.0);
      Tensor coef = normal_tensor({2, 3, 2, 2}, rng);
      const bool weight_only = target == GradTarget::weight;
      return finite_diff_check_params(
          [&] {
            return readout(weight_only ? calibration_weights(a, mu, sigma, mode) : calibration_map(a, mu, sigma, mode),
                           coef);
          },
          {a, mu, sigma}, opt);
    }
    case GradTarget::rc_layer: {
      RcLayerConfig cfg;
      cfg.channels = 8;
      cfg.reduction = 4;
      cfg.cdf_mode = mode;
      cfg.seed = rng.next_u64();
      RcLayer layer(cfg);
      // zero heads would make most weight gradients vanish
      for (const Tensor* t : {&layer.mean_weight(), &layer.mean_bias(), &layer.std_weight(), &layer.std_bias()}) {
        randomize(*t, rng, 0.2);
      }
      Tensor x = normal_tensor({2, 8, 3, 3}, rng);
      Tensor coef = normal_tensor({2, 8, 3, 3}, rng);
      std::vector<NamedParam> params;
      layer.collect_params("", params);
      std::vector<Tensor> wrt{x};
      for (auto& p : params) wrt.push_back(p.tensor);
      return finite_diff_check_params([&] { return readout(layer.forward(x), coef); }, wrt, opt);
    }
    case GradTarget::block: {
      RcLayerConfig cfg;
      cfg.reduction = 4;
      cfg.cdf_mode = mode;
      cfg.seed = rng.next_u64();
      BasicBlock block(4, 8, 2, rng, cfg);
      std::vector<NamedParam> params;
      block.collect_params("", params);
      for (auto& p : params) {
        if (p.name.find(".rc.") != std::string::npos || p.name.rfind("rc.", 0) == 0) randomize(p.tensor, rng, 0.2);
      }
      Tensor x = normal_tensor({2, 4, 6, 6}, rng);
      Tensor coef = normal_tensor({2, 8, 3, 3}, rng);
      std::vector<Tensor> wrt{x};
      for (auto& p : params) wrt.push_back(p.tensor);
      return finite_diff_check_params(
          [&] { return readout(block.forward(x, NormMode::train, Activation::relu, mode), coef); }, wrt, opt);
    }
    case GradTarget::model: {
      ModelSpec spec;
      spec.depth = 8;
      spec.variant = Variant::rescnet;
      spec.cdf_mode = mode;
      spec.rc.cdf_mode = mode;
      Model model(spec, rng.next_u64());
      std::vector<Tensor> wrt;
      Tensor images = normal_tensor({2, 3, 8, 8}, rng);
      wrt.push_back(images);
      for (auto& p : model.parameters()) {
        if (p.name == "stem.weight" || p.name.rfind("fc.", 0) == 0) wrt.push_back(p.tensor);
      }
      std::vector<int> labels{1, 7};
      return finite_diff_check_params([&] { return cross_entropy(model.forward(images, NormMode::train), labels); },
                                      wrt, opt);
    }
  }
  throw ConfigError("unknown gradcheck target");
}

}  // namespace

GradTargetReport run_grad_target(GradTarget target, CdfMode mode, std::size_t points, std::uint64_t seed,
                                 const GradCheckOptions& options) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(target) + 1));
  GradTargetReport report;
  const std::size_t max_attempts = std::max<std::size_t>(10 * points, 1);
  for (std::size_t attempt = 0; attempt < max_attempts && report.points_checked < points; ++attempt) {
    const GradCheckResult r = check_once(target, mode, rng, options);
    if (r.excluded) {
      ++report.points_excluded;
      continue;
    }
    ++report.points_checked;
    report.coordinates += r.coordinates;
    report.raw_max_rel_error = std::max(report.raw_max_rel_error, r.raw_max_rel_error);
    report.max_resolution = std::max(report.max_resolution, r.resolution);
    if (r.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = r.max_rel_error;
      report.worst_analytic = r.worst_analytic;
      report.worst_numeric = r.worst_numeric;
    }
  }
  return report;
}

}  // namespace rescal
