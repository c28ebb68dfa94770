#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "rescal/random.hpp"
#include "rescal/tensor.hpp"

namespace rescal {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageValues = kImageChannels * kImageSide * kImageSide;  // 3072
inline constexpr std::size_t kCifar10Record = 1 + kImageValues;                        // 3073
inline constexpr std::size_t kCifar100Record = 2 + kImageValues;                       // 3074

// Images are kept as the original bytes; pixel(i) = byte / 255 in [0, 1].
// Planar RGB, row-major 32x32 per plane.
struct Dataset {
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  // CIFAR-100 only; carried so files can be rewritten, never used for training.
  std::vector<int> coarse_labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image_bytes(std::size_t i) const {
    return std::span(pixels).subspan(i * kImageValues, kImageValues);
  }
};

Dataset decode_cifar10(std::span<const std::uint8_t> bytes);
Dataset decode_cifar100(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar10(const Dataset& data);
std::vector<std::uint8_t> encode_cifar100(const Dataset& data);

// Concatenates the files in order. Throws IoError / FormatError.
Dataset read_cifar10(std::span<const std::filesystem::path> paths);
Dataset read_cifar100(std::span<const std::filesystem::path> paths);
void write_cifar10(const Dataset& data, const std::filesystem::path& path);
void write_cifar100(const Dataset& data, const std::filesystem::path& path);

// First `count` records (or all when count >= size).
Dataset take_first(const Dataset& data, std::size_t count);

struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

inline constexpr double kNormStdFloor = 1e-8;

// Per-channel mean and population standard deviation over every pixel;
// the std is floored at kNormStdFloor.
NormStats compute_norm_stats(const Dataset& data);

enum class Augment { none, crop_flip };
std::string_view augment_name(Augment a);
Augment parse_augment(std::string_view text);

inline constexpr std::size_t kCropPadding = 4;

// Unnormalized [B,3,32,32] batch with pixels in [0,1].
Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

// Mirror one image plane-wise, in place. Involutive.
void hflip_image(std::span<double> image);

// Shift one image as if zero-padded by kCropPadding and cropped at (dy, dx),
// with dy, dx in [0, 2*kCropPadding]; optionally mirror afterwards.
void crop_flip_image(std::span<double> image, std::size_t dy, std::size_t dx, bool flip);

// Optional crop/flip (draws from rng) followed by (x - mean) / std per channel.
Tensor normalize_augment(const Tensor& batch, const NormStats& stats, Augment augment, Rng& rng);

// Class-conditional blob images: each class has a fixed template of coloured
// Gaussian blobs, samples add pixel noise and are quantized to bytes. Labels
// are assigned round-robin so class counts differ by at most one. Datasets
// with the same seed share templates; `sample_stream` selects the noise draw,
// so a held-out split uses the same seed with another stream.
// Throws ConfigError unless n >= classes >= 1.
Dataset synth_dataset(std::size_t n, int classes, std::uint64_t seed, std::uint64_t sample_stream = 0);

// Worker count, capped by the RESCAL_THREADS environment variable.
std::size_t worker_count();

struct Batch {
  Tensor images;  // normalized
  std::vector<int> labels;
};

// Iterates mini-batches over `order`. Augmentation for batch b draws from
// Rng(derive_seed(seed, b)), so output is identical with or without the
// background prefetch thread (used when worker_count() > 1).
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::vector<std::size_t> order, std::size_t batch_size, NormStats stats,
              Augment augment, std::uint64_t seed, bool prefetch);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  std::size_t batch_count() const;
  // Returns false when exhausted.
  bool next(Batch& out);

 private:
  Batch make(std::size_t index) const;
  struct Prefetcher;

  const Dataset& data_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  NormStats stats_;
  Augment augment_;
  std::uint64_t seed_;
  std::size_t next_ = 0;
  std::unique_ptr<Prefetcher> prefetcher_;
};

}  // namespace rescal
