#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "rescal/tensor.hpp"

namespace rescal {

// Piecewise ops (relu, gclu, the calibration map) report how close their
// inputs came to a branch point while a KinkMonitor is alive on this thread.
namespace detail {
inline thread_local bool kink_tracking = false;
inline thread_local double kink_min_distance = std::numeric_limits<double>::infinity();
}  // namespace detail

inline void note_kink_distance(double distance) {
  if (detail::kink_tracking && distance < detail::kink_min_distance) detail::kink_min_distance = distance;
}

class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  double min_distance() const { return detail::kink_min_distance; }

 private:
  bool previous_tracking_;
  double previous_distance_;
};

struct GradCheckOptions {
  double h = 1e-5;
  // Points whose forward pass touches a branch point closer than
  // kink_margin_factor * h are rejected.
  double kink_margin_factor = 10.0;
  double denom_floor = 1e-8;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool excluded = false;  // point was too close to a kink; no comparison made
  // the coordinate that produced max_rel_error
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Rounding bound of the difference quotient, eps * sum|f| / h. A coordinate
  // whose |analytic - numeric| is inside it counts as agreeing; the plain
  // relative error ignoring that bound is kept in raw_max_rel_error.
  double resolution = 0.0;
  double raw_max_rel_error = 0.0;
};

// Compares the taped gradient of sum(f(...)) against central differences, per
// coordinate of `point`, with step h. f may return any shape; the numeric derivative sums
// the elementwise output differences. The relative error of a coordinate
// is |analytic - numeric| / max(|analytic|, |numeric|, denom_floor), or 0
// when the difference is within `resolution`.
GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                                  const GradCheckOptions& options = {});

// Same comparison for every coordinate of every tensor in `wrt`, which are
// perturbed in place and restored. `f` reads them through captures.
GradCheckResult finite_diff_check_params(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                                         const GradCheckOptions& options = {});

}  // namespace rescal
