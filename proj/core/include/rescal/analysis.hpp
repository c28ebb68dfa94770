#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "rescal/calib_math.hpp"
#include "rescal/data.hpp"
#include "rescal/model.hpp"

namespace rescal {

// Row-major [N, C] matrix of post-GAP final-stage features.
struct DistMatrix {
  std::size_t samples = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double at(std::size_t n, std::size_t c) const { return values[n * channels + c]; }
  std::vector<double> column(std::size_t c) const;
};

struct ChannelSummary {
  std::size_t channel = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double max = 0.0;
};

// Eval-mode pass over every sample in order; no sample is dropped.
DistMatrix collect_distributions(Model& model, const Dataset& data, const NormStats& stats,
                                 std::size_t batch_size = 256);

// Linear-interpolation quantile on sorted data (R type 7).
double quantile_sorted(const std::vector<double>& sorted, double q);

std::vector<ChannelSummary> summarize_channels(const DistMatrix& m);

// Numbers with 9 significant digits.
std::string format_number(double v);

void write_dist_csv(const DistMatrix& m, const std::filesystem::path& path);
void write_summary_csv(const std::vector<ChannelSummary>& s, const std::filesystem::path& path);

inline constexpr std::size_t kMinNormalitySamples = 30;

struct NormalityResult {
  std::size_t channel = 0;
  double ks_distance = 0.0;
  bool degenerate = false;  // zero variance; distance reported as 1
};

// KS distance between one standardized sample and the standard normal CDF.
// Throws ContractError when fewer than kMinNormalitySamples values are given.
NormalityResult ks_normal_distance(std::vector<double> values);
std::vector<NormalityResult> channel_normality(const DistMatrix& m);
void write_normality_csv(const std::vector<NormalityResult>& r, const std::filesystem::path& path);

struct CdfBenchRow {
  CdfMode mode = CdfMode::exact;
  double sup_error = 0.0;  // vs exact over the grid
  double seconds = 0.0;    // wall clock for `evaluations` gclu calls
  std::size_t evaluations = 0;
};

inline constexpr double kCdfGridLimit = 8.0;
inline constexpr double kCdfGridStep = 1e-3;

// Sup |Phi_mode - Phi_exact| over x = -8 + k * 1e-3, k = 0..16000.
double cdf_sup_error(CdfMode mode);

// Throws ContractError on an empty mode list.
std::vector<CdfBenchRow> bench_cdf(const std::vector<CdfMode>& modes, std::size_t evaluations = 10'000'000);
void write_bench_csv(const std::vector<CdfBenchRow>& rows, const std::filesystem::path& path);

}  // namespace rescal
