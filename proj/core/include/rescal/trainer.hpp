#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rescal/data.hpp"
#include "rescal/model.hpp"

namespace rescal {

enum class Schedule { cosine, step };
std::string_view schedule_name(Schedule s);
Schedule parse_schedule(std::string_view text);

enum class DatasetKind { cifar10, cifar100, synth };
std::string_view dataset_kind_name(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view text);

// Where training and test data come from.
struct DataSource {
  DatasetKind kind = DatasetKind::cifar10;
  std::filesystem::path dir;       // cifar*: directory holding the binary batches
  std::size_t train_limit = 0;     // 0 = all records
  std::size_t test_limit = 0;
  std::size_t synth_train = 1000;  // synth only
  std::size_t synth_test = 200;
};

struct TrainConfig {
  int epochs = 200;
  int warmup_epochs = 5;
  double base_lr = 0.1;
  double min_lr = 0.0;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Schedule schedule = Schedule::cosine;
  std::vector<int> step_milestones;
  double step_gamma = 0.1;
  std::uint64_t seed = 0;
  Augment augment = Augment::crop_flip;
  ModelSpec model{};
  DataSource data{};
  std::filesystem::path history_path;     // CSV, optional
  std::filesystem::path checkpoint_path;  // optional
};

// Throws ConfigError on violated invariants (warmup >= epochs when epochs > 0,
// base_lr <= 0, batch_size < 1, ...).
void validate(const TrainConfig& config);

// Parses "key = value" lines; '#' starts a comment. Unknown keys are errors.
// Throws IoError naming the path when it cannot be read.
TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(const std::string& text);

// Learning rate for a 0-based epoch: linear warmup base_lr * (e + 1) / warmup,
// then cosine from base_lr down to min_lr, reached on the final epoch (or step
// decay by gamma per passed milestone).
double lr_at(const TrainConfig& config, int epoch);

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// g' = g + wd p;  v = momentum v + g';  p -= lr v
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const SgdHyper& hyper);

// Momentum SGD over a fixed parameter list. Parameters flagged without weight
// decay (BN affine, biases) always use weight_decay = 0.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<NamedParam> params, double momentum, double weight_decay);
  void step(double lr);
  void zero_grad();
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  double initial_loss = 0.0;        // first mini-batch loss before any update
  std::vector<double> step_losses;  // every mini-batch loss in order
};

void write_history_csv(const RunHistory& history, const std::filesystem::path& path);

struct Metrics {
  double loss = 0.0;
  std::map<int, double> top_k;  // k -> accuracy in [0,1]
  double top1() const { return top_k.at(1); }
};

// Whether `label` is among the k largest logits, ties broken toward the lower
// class index.
bool in_top_k(std::span<const double> logits, int label, int k);

Metrics evaluate(Model& model, const Dataset& data, const NormStats& stats, std::vector<int> ks = {1, 5},
                 std::size_t batch_size = 256);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Ends training after the epoch for which this returns true; the schedule
  // still follows config.epochs.
  std::function<bool(const EpochRecord&)> stop_when;
};

// Mini-batch SGD with cross-entropy; evaluates `test` after every epoch and
// writes the history / checkpoint when the config names paths. Throws
// NumericError naming epoch and step if a loss is not finite.
RunHistory train(Model& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                 const TrainHooks& hooks = {});

// Training-set statistics used for input normalization.
NormStats training_norm_stats(const Dataset& train_set);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  int epoch = 0;
  NormStats stats{};
  std::map<std::string, std::string> extra;
};

// Text manifest (model spec, seed, epoch, normalization, ordered tensor index)
// followed by a little-endian float64 blob.
void save_checkpoint(const std::filesystem::path& path, Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Loads the training and test sets described by `source`.
std::pair<Dataset, Dataset> load_data(const DataSource& source, int num_classes, std::uint64_t seed);

}  // namespace rescal
