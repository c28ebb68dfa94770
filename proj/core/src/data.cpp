#include "rescal/data.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iterator>
#include <mutex>
#include <thread>

#include "rescal/errors.hpp"

namespace rescal {

namespace {

Dataset decode_records(std::span<const std::uint8_t> bytes, bool fine_and_coarse) {
  const std::size_t record = fine_and_coarse ? kCifar100Record : kCifar10Record;
  const int classes = fine_and_coarse ? 100 : 10;
  if (bytes.size() % record != 0) {
    throw FormatError("byte length " + std::to_string(bytes.size()) + " is not a multiple of the " +
                      std::to_string(record) + "-byte record size");
  }
  const std::size_t n = bytes.size() / record;
  Dataset out;
  out.class_count = classes;
  out.labels.resize(n);
  if (fine_and_coarse) out.coarse_labels.resize(n);
  out.pixels.resize(n * kImageValues);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    const int label = fine_and_coarse ? rec[1] : rec[0];
    if (label >= classes) {
      throw FormatError("record " + std::to_string(i) + " has label " + std::to_string(label) + " >= " +
                        std::to_string(classes));
    }
    out.labels[i] = label;
    if (fine_and_coarse) out.coarse_labels[i] = rec[0];
    const std::size_t header = fine_and_coarse ? 2 : 1;
    std::copy_n(rec + header, kImageValues, out.pixels.begin() + static_cast<std::ptrdiff_t>(i * kImageValues));
  }
  return out;
}

std::vector<std::uint8_t> encode_records(const Dataset& data, bool fine_and_coarse) {
  const std::size_t record = fine_and_coarse ? kCifar100Record : kCifar10Record;
  const std::size_t n = data.size();
  if (data.pixels.size() != n * kImageValues) throw SizeError("dataset pixel count does not match label count");
  std::vector<std::uint8_t> bytes(n * record);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t* rec = bytes.data() + i * record;
    const int limit = fine_and_coarse ? 100 : 10;
    if (data.labels[i] < 0 || data.labels[i] >= limit) {
      throw FormatError("label " + std::to_string(data.labels[i]) + " cannot be encoded");
    }
    std::size_t header = 1;
    if (fine_and_coarse) {
      rec[0] = static_cast<std::uint8_t>(data.coarse_labels.empty() ? 0 : data.coarse_labels[i]);
      rec[1] = static_cast<std::uint8_t>(data.labels[i]);
      header = 2;
    } else {
      rec[0] = static_cast<std::uint8_t>(data.labels[i]);
    }
    auto img = data.image_bytes(i);
    std::copy(img.begin(), img.end(), rec + header);
  }
  return bytes;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Dataset read_all(std::span<const std::filesystem::path> paths, bool cifar100) {
  Dataset out;
  out.class_count = cifar100 ? 100 : 10;
  for (const auto& p : paths) {
    Dataset part;
    try {
      part = decode_records(read_file(p), cifar100);
    } catch (const FormatError& e) {
      throw FormatError(p.string() + ": " + e.what());
    }
    out.pixels.insert(out.pixels.end(), part.pixels.begin(), part.pixels.end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
    out.coarse_labels.insert(out.coarse_labels.end(), part.coarse_labels.begin(), part.coarse_labels.end());
  }
  return out;
}

}  // namespace

Dataset decode_cifar10(std::span<const std::uint8_t> bytes) { return decode_records(bytes, false); }
Dataset decode_cifar100(std::span<const std::uint8_t> bytes) { return decode_records(bytes, true); }
std::vector<std::uint8_t> encode_cifar10(const Dataset& data) { return encode_records(data, false); }
std::vector<std::uint8_t> encode_cifar100(const Dataset& data) { return encode_records(data, true); }

Dataset read_cifar10(std::span<const std::filesystem::path> paths) { return read_all(paths, false); }
Dataset read_cifar100(std::span<const std::filesystem::path> paths) { return read_all(paths, true); }

void write_cifar10(const Dataset& data, const std::filesystem::path& path) {
  write_file(path, encode_cifar10(data));
}
void write_cifar100(const Dataset& data, const std::filesystem::path& path) {
  write_file(path, encode_cifar100(data));
}

Dataset take_first(const Dataset& data, std::size_t count) {
  const std::size_t n = std::min(count, data.size());
  Dataset out;
  out.class_count = data.class_count;
  out.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(n));
  if (!data.coarse_labels.empty()) {
    out.coarse_labels.assign(data.coarse_labels.begin(), data.coarse_labels.begin() + static_cast<std::ptrdiff_t>(n));
  }
  out.pixels.assign(data.pixels.begin(), data.pixels.begin() + static_cast<std::ptrdiff_t>(n * kImageValues));
  return out;
}

NormStats compute_norm_stats(const Dataset& data) {
  if (data.size() == 0) throw ContractError("cannot compute normalization statistics of an empty dataset");
  constexpr std::size_t plane = kImageSide * kImageSide;
  NormStats stats;
  const double count = static_cast<double>(data.size() * plane);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::uint8_t* p = data.pixels.data() + i * kImageValues + c * plane;
      for (std::size_t j = 0; j < plane; ++j) s += p[j] / 255.0;
    }
    const double m = s / count;
    double v = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::uint8_t* p = data.pixels.data() + i * kImageValues + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = p[j] / 255.0 - m;
        v += d * d;
      }
    }
    stats.mean[c] = m;
    stats.std[c] = std::max(std::sqrt(v / count), kNormStdFloor);
  }
  return stats;
}

std::string_view augment_name(Augment a) { return a == Augment::none ? "none" : "crop_flip"; }

Augment parse_augment(std::string_view text) {
  if (text == "none") return Augment::none;
  if (text == "crop_flip") return Augment::crop_flip;
  throw ConfigError("unknown augment '" + std::string(text) + "' (expected none|crop_flip)");
}

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<double> values(indices.size() * kImageValues);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= data.size()) throw ShapeError("image index out of range");
    auto img = data.image_bytes(indices[b]);
    for (std::size_t j = 0; j < kImageValues; ++j) values[b * kImageValues + j] = img[j] / 255.0;
  }
  return Tensor::create({indices.size(), kImageChannels, kImageSide, kImageSide}, std::move(values));
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) out[b] = data.labels.at(indices[b]);
  return out;
}

void hflip_image(std::span<double> image) {
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (std::size_t r = 0; r < kImageSide; ++r) {
      double* row = image.data() + (c * kImageSide + r) * kImageSide;
      std::reverse(row, row + kImageSide);
    }
  }
}

void crop_flip_image(std::span<double> image, std::size_t dy, std::size_t dx, bool flip) {
  constexpr std::size_t plane = kImageSide * kImageSide;
  std::array<double, kImageValues> src;
  std::copy(image.begin(), image.end(), src.begin());
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (std::size_t r = 0; r < kImageSide; ++r) {
      const long sr = static_cast<long>(r + dy) - static_cast<long>(kCropPadding);
      for (std::size_t q = 0; q < kImageSide; ++q) {
        const long sq = static_cast<long>(q + dx) - static_cast<long>(kCropPadding);
        const bool inside = sr >= 0 && sq >= 0 && sr < static_cast<long>(kImageSide) && sq < static_cast<long>(kImageSide);
        image[c * plane + r * kImageSide + q] = inside ? src[c * plane + sr * kImageSide + sq] : 0.0;
      }
    }
  }
  if (flip) hflip_image(image);
}

Tensor normalize_augment(const Tensor& batch, const NormStats& stats, Augment augment, Rng& rng) {
  if (batch.rank() != 4 || batch.dim(1) != kImageChannels || batch.dim(2) != kImageSide ||
      batch.dim(3) != kImageSide) {
    throw ShapeError("expected [B,3,32,32] batch, got " + shape_string(batch.shape()));
  }
  Tensor out = batch.clone();
  out.set_requires_grad(false);
  auto values = out.mutable_data();
  const std::size_t n = batch.dim(0);
  constexpr std::size_t plane = kImageSide * kImageSide;
  for (std::size_t b = 0; b < n; ++b) {
    auto img = values.subspan(b * kImageValues, kImageValues);
    if (augment == Augment::crop_flip) {
      const auto dy = static_cast<std::size_t>(rng.below(2 * kCropPadding + 1));
      const auto dx = static_cast<std::size_t>(rng.below(2 * kCropPadding + 1));
      const bool flip = rng.bernoulli(0.5);
      crop_flip_image(img, dy, dx, flip);
    }
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      for (std::size_t j = 0; j < plane; ++j) {
        double& v = img[c * plane + j];
        v = (v - stats.mean[c]) / stats.std[c];
      }
    }
  }
  return out;
}

Dataset synth_dataset(std::size_t n, int classes, std::uint64_t seed, std::uint64_t sample_stream) {
  if (classes < 1 || n < static_cast<std::size_t>(classes)) {
    throw ConfigError("synth_dataset needs n >= classes >= 1");
  }
  constexpr std::size_t plane = kImageSide * kImageSide;
  constexpr int kBlobs = 3;
  Rng template_rng(derive_seed(seed, 1));
  std::vector<std::array<double, kImageValues>> templates(static_cast<std::size_t>(classes));
  for (auto& t : templates) {
    std::array<double, 3> base{};
    for (double& b : base) b = template_rng.uniform(0.2, 0.5);
    for (std::size_t c = 0; c < kImageChannels; ++c) std::fill_n(t.begin() + c * plane, plane, base[c]);
    for (int k = 0; k < kBlobs; ++k) {
      const double cy = template_rng.uniform(6.0, 26.0), cx = template_rng.uniform(6.0, 26.0);
      const double radius = template_rng.uniform(3.0, 7.0);
      std::array<double, 3> amp{};
      for (double& a : amp) a = template_rng.uniform(-0.3, 0.5);
      for (std::size_t r = 0; r < kImageSide; ++r) {
        for (std::size_t q = 0; q < kImageSide; ++q) {
          const double d2 = (r - cy) * (r - cy) + (q - cx) * (q - cx);
          const double g = std::exp(-d2 / (2.0 * radius * radius));
          for (std::size_t c = 0; c < kImageChannels; ++c) t[c * plane + r * kImageSide + q] += amp[c] * g;
        }
      }
    }
  }

  Rng sample_rng(derive_seed(seed, 2 + sample_stream));
  Dataset out;
  out.class_count = classes;
  out.labels.resize(n);
  out.pixels.resize(n * kImageValues);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    out.labels[i] = label;
    const auto& t = templates[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < kImageValues; ++j) {
      const double v = std::clamp(t[j] + sample_rng.normal(0.0, 0.08), 0.0, 1.0);
      out.pixels[i * kImageValues + j] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return out;
}

std::size_t worker_count() {
  std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RESCAL_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) hw = std::min(hw, static_cast<std::size_t>(cap));
  }
  return hw;
}

struct BatchStream::Prefetcher {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<Batch> ready;
  std::size_t produced = 0;
  bool stop = false;
  std::thread worker;
};

BatchStream::BatchStream(const Dataset& data, std::vector<std::size_t> order, std::size_t batch_size,
                         NormStats stats, Augment augment, std::uint64_t seed, bool prefetch)
    : data_(data),
      order_(std::move(order)),
      batch_size_(std::max<std::size_t>(1, batch_size)),
      stats_(stats),
      augment_(augment),
      seed_(seed) {
  if (!prefetch || batch_count() < 2) return;
  prefetcher_ = std::make_unique<Prefetcher>();
  prefetcher_->worker = std::thread([this] {
    auto& pf = *prefetcher_;
    for (std::size_t b = 0; b < batch_count(); ++b) {
      Batch batch = make(b);
      std::unique_lock lock(pf.mutex);
      pf.cv.wait(lock, [&] { return pf.stop || pf.ready.size() < 2; });
      if (pf.stop) return;
      pf.ready.push_back(std::move(batch));
      ++pf.produced;
      pf.cv.notify_all();
    }
  });
}

BatchStream::~BatchStream() {
  if (!prefetcher_) return;
  {
    std::lock_guard lock(prefetcher_->mutex);
    prefetcher_->stop = true;
  }
  prefetcher_->cv.notify_all();
  prefetcher_->worker.join();
}

std::size_t BatchStream::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

Batch BatchStream::make(std::size_t index) const {
  const std::size_t begin = index * batch_size_;
  const std::size_t end = std::min(order_.size(), begin + batch_size_);
  std::span<const std::size_t> idx(order_.data() + begin, end - begin);
  Rng rng(derive_seed(seed_, index));
  return {normalize_augment(gather_images(data_, idx), stats_, augment_, rng), gather_labels(data_, idx)};
}

bool BatchStream::next(Batch& out) {
  if (next_ >= batch_count()) return false;
  if (prefetcher_) {
    auto& pf = *prefetcher_;
    std::unique_lock lock(pf.mutex);
    pf.cv.wait(lock, [&] { return !pf.ready.empty(); });
    out = std::move(pf.ready.front());
    pf.ready.pop_front();
    pf.cv.notify_all();
  } else {
    out = make(next_);
  }
  ++next_;
  return true;
}

}  // namespace rescal
