#include "rescal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rescal/errors.hpp"
#include "rescal/ops.hpp"

namespace rescal {

KinkMonitor::KinkMonitor()
    : previous_tracking_(detail::kink_tracking), previous_distance_(detail::kink_min_distance) {
  detail::kink_tracking = true;
  detail::kink_min_distance = std::numeric_limits<double>::infinity();
}

KinkMonitor::~KinkMonitor() {
  detail::kink_tracking = previous_tracking_;
  detail::kink_min_distance = previous_distance_;
}

namespace {

std::vector<double> eval_outputs(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const Tensor y = f();
  return {y.data().begin(), y.data().end()};
}

// Sum of elementwise differences: entries the perturbation does not reach
// cancel exactly instead of adding their rounding error to the total.
double central_difference(const std::vector<double>& up, const std::vector<double>& down, double h) {
  double acc = 0.0;
  for (std::size_t i = 0; i < up.size(); ++i) acc += up[i] - down[i];
  return acc / (2.0 * h);
}

double rel_error(double analytic, double numeric, double floor) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

GradCheckResult finite_diff_check_params(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                                         const GradCheckOptions& options) {
  GradCheckResult result;
  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  double kink_distance = 0.0;
  {
    KinkMonitor monitor;
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum(f());
    tape.backward(loss);
    kink_distance = monitor.min_distance();
  }

  if (kink_distance < options.kink_margin_factor * options.h) {
    result.excluded = true;
  } else {
    // each output may be an ulp off in both evaluations; the quotient divides
    // the summed differences by 2h
    double magnitude = 0.0;
    for (double y : eval_outputs(f)) magnitude += std::abs(y);
    result.resolution = std::numeric_limits<double>::epsilon() * magnitude / options.h;
    for (auto& t : wrt) {
      std::vector<double> analytic(t.size(), 0.0);
      if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
      auto values = t.mutable_data();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double original = values[i];
        auto at = [&](double offset) {
          values[i] = original + offset;
          return eval_outputs(f);
        };
        const auto up = at(options.h);
        const auto down = at(-options.h);
        values[i] = original;
        const double numeric = central_difference(up, down, options.h);
        const double raw = rel_error(analytic[i], numeric, options.denom_floor);
        result.raw_max_rel_error = std::max(result.raw_max_rel_error, raw);
        const double err = std::abs(analytic[i] - numeric) <= result.resolution ? 0.0 : raw;
        if (err > result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_analytic = analytic[i];
          result.worst_numeric = numeric;
        }
        ++result.coordinates;
      }
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    wrt[i].zero_grad();
    wrt[i].set_requires_grad(saved_flags[i]);
  }
  return result;
}

GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                                  const GradCheckOptions& options) {
  Tensor x = point.clone();
  return finite_diff_check_params([&] { return f(x); }, {x}, options);
}

}  // namespace rescal
