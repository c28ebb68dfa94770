#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "rescal/calib_math.hpp"
#include "rescal/gradcheck.hpp"

namespace rescal {

// Canned gradient checks over randomly drawn points.
//   gclu      elementwise activation
//   weight    calibration_weights w.r.t. features, mu, sigma
//   value     calibration_map w.r.t. features, mu, sigma
//   rc_layer  RC layer w.r.t. input and every weight (heads randomized)
//   block     residual block with RC layer, shortcut conv and train-mode BN
//   model     depth-8 network w.r.t. images, stem weight and classifier
enum class GradTarget { gclu, weight, value, rc_layer, block, model };

std::string_view grad_target_name(GradTarget t);
GradTarget parse_grad_target(std::string_view text);

struct GradTargetReport {
  double max_rel_error = 0.0;
  std::size_t points_checked = 0;
  std::size_t points_excluded = 0;  // drawn too close to a kink
  std::size_t coordinates = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double raw_max_rel_error = 0.0;  // without the rounding allowance
  double max_resolution = 0.0;
};

// Draws until `points` points have been compared (kink-adjacent draws are
// replaced, up to 10x `points` attempts).
GradTargetReport run_grad_target(GradTarget target, CdfMode mode, std::size_t points, std::uint64_t seed,
                                 const GradCheckOptions& options = {});

}  // namespace rescal
