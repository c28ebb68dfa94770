#include "rescal/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "rescal/errors.hpp"

namespace rescal {

std::vector<double> DistMatrix::column(std::size_t c) const {
  std::vector<double> out(samples);
  for (std::size_t n = 0; n < samples; ++n) out[n] = at(n, c);
  return out;
}

DistMatrix collect_distributions(Model& model, const Dataset& data, const NormStats& stats,
                                 std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("distribution export needs a nonempty dataset");
  NoGradScope no_grad;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  BatchStream stream(data, std::move(order), batch_size, stats, Augment::none, 0, false);
  DistMatrix m;
  Batch batch;
  while (stream.next(batch)) {
    const Tensor features = model.forward_full(batch.images, NormMode::eval).features;
    m.channels = features.dim(1);
    auto v = features.data();
    m.values.insert(m.values.end(), v.begin(), v.end());
    m.samples += features.dim(0);
  }
  for (double v : m.values) {
    if (!std::isfinite(v)) throw NumericError("non-finite feature value in distribution export");
  }
  return m;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ContractError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<ChannelSummary> summarize_channels(const DistMatrix& m) {
  std::vector<ChannelSummary> out;
  if (m.samples == 0) return out;
  for (std::size_t c = 0; c < m.channels; ++c) {
    auto col = m.column(c);
    ChannelSummary s;
    s.channel = c;
    s.mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(col.size()));
    std::sort(col.begin(), col.end());
    s.min = col.front();
    s.max = col.back();
    s.p25 = quantile_sorted(col, 0.25);
    s.p50 = quantile_sorted(col, 0.50);
    s.p75 = quantile_sorted(col, 0.75);
    out.push_back(s);
  }
  return out;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

void write_dist_csv(const DistMatrix& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "sample_id";
  for (std::size_t c = 0; c < m.channels; ++c) out << ",ch_" << c;
  out << '\n';
  for (std::size_t n = 0; n < m.samples; ++n) {
    out << n;
    for (std::size_t c = 0; c < m.channels; ++c) out << ',' << format_number(m.at(n, c));
    out << '\n';
  }
  finish(out, path);
}

void write_summary_csv(const std::vector<ChannelSummary>& s, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "channel,mean,std,min,p25,p50,p75,max\n";
  for (const auto& r : s) {
    out << r.channel << ',' << format_number(r.mean) << ',' << format_number(r.std) << ',' << format_number(r.min)
        << ',' << format_number(r.p25) << ',' << format_number(r.p50) << ',' << format_number(r.p75) << ','
        << format_number(r.max) << '\n';
  }
  finish(out, path);
}

NormalityResult ks_normal_distance(std::vector<double> values) {
  const std::size_t n = values.size();
  if (n < kMinNormalitySamples) {
    throw ContractError("normality diagnostic needs at least " + std::to_string(kMinNormalitySamples) +
                        " samples, got " + std::to_string(n) + "; export more images");
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  NormalityResult r;
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    r.ks_distance = 1.0;
    r.degenerate = true;
    return r;
  }
  std::sort(values.begin(), values.end());
  const double nn = static_cast<double>(n);
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = std_normal_cdf((values[i] - mean) / sd, CdfMode::exact);
    d = std::max({d, static_cast<double>(i + 1) / nn - f, f - static_cast<double>(i) / nn});
  }
  r.ks_distance = d;
  return r;
}

std::vector<NormalityResult> channel_normality(const DistMatrix& m) {
  std::vector<NormalityResult> out;
  for (std::size_t c = 0; c < m.channels; ++c) {
    auto r = ks_normal_distance(m.column(c));
    r.channel = c;
    out.push_back(r);
  }
  return out;
}

void write_normality_csv(const std::vector<NormalityResult>& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "channel,ks_distance,degenerate\n";
  for (const auto& x : r) out << x.channel << ',' << format_number(x.ks_distance) << ',' << (x.degenerate ? 1 : 0) << '\n';
  finish(out, path);
}

double cdf_sup_error(CdfMode mode) {
  const auto steps = static_cast<long>(std::lround(2.0 * kCdfGridLimit / kCdfGridStep));
  double sup = 0.0;
  for (long k = 0; k <= steps; ++k) {
    const double x = -kCdfGridLimit + static_cast<double>(k) * kCdfGridStep;
    sup = std::max(sup, std::abs(std_normal_cdf(x, mode) - std_normal_cdf(x, CdfMode::exact)));
  }
  return sup;
}

std::vector<CdfBenchRow> bench_cdf(const std::vector<CdfMode>& modes, std::size_t evaluations) {
  if (modes.empty()) throw ContractError("bench-cdf needs at least one mode");
  std::vector<CdfBenchRow> rows;
  for (CdfMode mode : modes) {
    CdfBenchRow row;
    row.mode = mode;
    row.sup_error = cdf_sup_error(mode);
    row.evaluations = evaluations;
    // inputs sweep [-4, 4); the sum keeps the loop from being optimized away
    const double step = 8.0 / static_cast<double>(std::max<std::size_t>(evaluations, 1));
    volatile double sink = 0.0;
    double acc = 0.0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < evaluations; ++i) acc += gclu(-4.0 + static_cast<double>(i) * step, mode);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    sink = acc;
    (void)sink;
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(const std::vector<CdfBenchRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "mode,sup_error,seconds,evaluations\n";
  for (const auto& r : rows) {
    out << cdf_mode_name(r.mode) << ',' << format_number(r.sup_error) << ',' << format_number(r.seconds) << ','
        << r.evaluations << '\n';
  }
  finish(out, path);
}

}  // namespace rescal
