#include "rescal/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rescal/errors.hpp"
#include "rescal/ops.hpp"

namespace rescal {

std::string_view schedule_name(Schedule s) { return s == Schedule::cosine ? "cosine" : "step"; }

Schedule parse_schedule(std::string_view text) {
  if (text == "cosine") return Schedule::cosine;
  if (text == "step") return Schedule::step;
  throw ConfigError("unknown schedule '" + std::string(text) + "' (expected cosine|step)");
}

std::string_view dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::cifar10:
      return "cifar10";
    case DatasetKind::cifar100:
      return "cifar100";
    case DatasetKind::synth:
      return "synth";
  }
  return "cifar10";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "cifar10") return DatasetKind::cifar10;
  if (text == "cifar100") return DatasetKind::cifar100;
  if (text == "synth") return DatasetKind::synth;
  throw ConfigError("unknown dataset '" + std::string(text) + "' (expected cifar10|cifar100|synth)");
}

void validate(const TrainConfig& c) {
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (c.epochs > 0 && c.warmup_epochs >= c.epochs) throw ConfigError("warmup_epochs must be < epochs");
  if (!(c.base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (c.min_lr < 0.0 || c.min_lr > c.base_lr) throw ConfigError("min_lr must lie in [0, base_lr]");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  validate(c.model);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("key '" + key + "': cannot parse '" + value + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  }
  return out;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "epochs") c.epochs = parse_number<int>(key, value);
    else if (key == "warmup_epochs") c.warmup_epochs = parse_number<int>(key, value);
    else if (key == "base_lr") c.base_lr = parse_number<double>(key, value);
    else if (key == "min_lr") c.min_lr = parse_number<double>(key, value);
    else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
    else if (key == "momentum") c.momentum = parse_number<double>(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, value);
    else if (key == "schedule") c.schedule = parse_schedule(value);
    else if (key == "milestones") c.step_milestones = parse_int_list(key, value);
    else if (key == "gamma") c.step_gamma = parse_number<double>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "augment") c.augment = parse_augment(value);
    else if (key == "depth") c.model.depth = parse_number<int>(key, value);
    else if (key == "classes") c.model.num_classes = parse_number<int>(key, value);
    else if (key == "variant") c.model.variant = parse_variant(value);
    else if (key == "cdf") {
      c.model.cdf_mode = parse_cdf_mode(value);
      c.model.rc.cdf_mode = c.model.cdf_mode;
    }
    else if (key == "reduction") c.model.rc.reduction = parse_number<std::size_t>(key, value);
    else if (key == "rc_variant") c.model.rc.variant = parse_rc_variant(value);
    else if (key == "mid_activation") c.model.rc.mid_activation = parse_mid_activation(value);
    else if (key == "dataset") c.data.kind = parse_dataset_kind(value);
    else if (key == "data_dir") c.data.dir = value;
    else if (key == "train_limit") c.data.train_limit = parse_number<std::size_t>(key, value);
    else if (key == "test_limit") c.data.test_limit = parse_number<std::size_t>(key, value);
    else if (key == "synth_train") c.data.synth_train = parse_number<std::size_t>(key, value);
    else if (key == "synth_test") c.data.synth_test = parse_number<std::size_t>(key, value);
    else if (key == "history") c.history_path = value;
    else if (key == "checkpoint") c.checkpoint_path = value;
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  validate(c);
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

double lr_at(const TrainConfig& c, int epoch) {
  if (epoch < 0 || epoch >= c.epochs) {
    throw ContractError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(c.epochs) + ")");
  }
  if (epoch < c.warmup_epochs) {
    return c.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(c.warmup_epochs);
  }
  if (c.schedule == Schedule::step) {
    const auto passed = std::count_if(c.step_milestones.begin(), c.step_milestones.end(),
                                      [&](int m) { return m <= epoch; });
    return c.base_lr * std::pow(c.step_gamma, static_cast<double>(passed));
  }
  // the last epoch sits at t == T
  const int span = c.epochs - c.warmup_epochs - 1;
  if (span <= 0) return c.base_lr;
  const double t = static_cast<double>(epoch - c.warmup_epochs);
  return c.min_lr + 0.5 * (c.base_lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * t / span));
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const SgdHyper& hyper) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + hyper.weight_decay * params[i];
    velocity[i] = hyper.momentum * velocity[i] + g;
    params[i] -= hyper.lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(std::vector<NamedParam> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.size(), 0.0);
}

void SgdOptimizer::step(double lr) {
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    std::span<const double> g = p.tensor.grad();
    if (!p.tensor.has_grad()) {
      zeros.assign(p.tensor.size(), 0.0);
      g = zeros;
    }
    sgd_step(p.tensor.mutable_data(), g, velocity_[i],
             {lr, momentum_, p.weight_decay ? weight_decay_ : 0.0});
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void write_history_csv(const RunHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,train_acc,test_acc,lr,seconds\n";
  char buf[256];
  for (const auto& r : history.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.train_acc, r.test_acc,
                  r.lr, r.seconds);
    out << buf;
  }
  if (!out) throw IoError("short write to " + path.string());
}

bool in_top_k(std::span<const double> logits, int label, int k) {
  const double target = logits[static_cast<std::size_t>(label)];
  int rank = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (logits[j] > target || (logits[j] == target && static_cast<int>(j) < label)) ++rank;
  }
  return rank < k;
}

Metrics evaluate(Model& model, const Dataset& data, const NormStats& stats, std::vector<int> ks,
                 std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate needs a nonempty dataset");
  if (ks.empty()) ks = {1};
  NoGradScope no_grad;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  BatchStream stream(data, std::move(order), batch_size, stats, Augment::none, 0, false);
  std::map<int, std::size_t> hits;
  double loss_sum = 0.0;
  Batch batch;
  while (stream.next(batch)) {
    Tensor logits = model.forward(batch.images, NormMode::eval);
    loss_sum += cross_entropy(logits, batch.labels).item() * static_cast<double>(batch.labels.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < batch.labels.size(); ++r) {
      auto row = logits.data().subspan(r * k, k);
      for (int kk : ks) hits[kk] += in_top_k(row, batch.labels[r], kk) ? 1 : 0;
    }
  }
  Metrics m;
  m.loss = loss_sum / static_cast<double>(data.size());
  for (int kk : ks) m.top_k[kk] = static_cast<double>(hits[kk]) / static_cast<double>(data.size());
  return m;
}

NormStats training_norm_stats(const Dataset& train_set) { return compute_norm_stats(train_set); }

RunHistory train(Model& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                 const TrainHooks& hooks) {
  validate(config);
  RunHistory history;
  if (config.epochs == 0) return history;
  if (train_set.size() == 0 || test_set.size() == 0) throw ContractError("training needs nonempty datasets");
  if (train_set.class_count != model.spec().num_classes) {
    throw ContractError("model has " + std::to_string(model.spec().num_classes) + " classes, dataset has " +
                        std::to_string(train_set.class_count));
  }

  const NormStats stats = training_norm_stats(train_set);
  auto params = model.parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  SgdOptimizer optimizer(params, config.momentum, config.weight_decay);
  const bool prefetch = worker_count() > 1;
  bool first_step = true;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(config, epoch);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    BatchStream stream(train_set, std::move(order), static_cast<std::size_t>(config.batch_size), stats,
                       config.augment, derive_seed(config.seed, 0xa0900000ULL + static_cast<std::uint64_t>(epoch)),
                       prefetch);

    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0, step = 0;
    Batch batch;
    while (stream.next(batch)) {
      Tape tape;
      Tensor loss;
      Tensor logits;
      {
        Tape::Scope scope(tape);
        logits = model.forward(batch.images, NormMode::train);
        loss = cross_entropy(logits, batch.labels);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           " (lr " + std::to_string(lr) + ")");
      }
      if (first_step) {
        history.initial_loss = value;
        first_step = false;
      }
      history.step_losses.push_back(value);
      const std::size_t k = logits.dim(1);
      for (std::size_t r = 0; r < batch.labels.size(); ++r) {
        correct += in_top_k(logits.data().subspan(r * k, k), batch.labels[r], 1) ? 1 : 0;
      }
      loss_sum += value * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();

      tape.backward(loss);
      optimizer.step(lr);
      optimizer.zero_grad();
      ++step;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    record.test_acc = evaluate(model, test_set, stats, {1}).top1();
    record.lr = lr;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (hooks.stop_when && hooks.stop_when(record)) break;
  }

  if (!config.history_path.empty()) write_history_csv(history, config.history_path);
  if (!config.checkpoint_path.empty()) {
    CheckpointMeta meta;
    meta.seed = model.seed();
    meta.epoch = static_cast<int>(history.epochs.size());
    meta.stats = stats;
    save_checkpoint(config.checkpoint_path, model, meta);
  }
  return history;
}

namespace {

constexpr std::string_view kMagic = "rescal-checkpoint 1";

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("bad number '" + s + "' in checkpoint");
  return v;
}

void put_f64(std::string& blob, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const CheckpointMeta& meta) {
  const auto& spec = model.spec();
  std::ostringstream head;
  head << kMagic << '\n';
  head << "depth = " << spec.depth << '\n';
  head << "classes = " << spec.num_classes << '\n';
  head << "variant = " << variant_name(spec.variant) << '\n';
  head << "cdf = " << cdf_mode_name(spec.cdf_mode) << '\n';
  head << "rc_variant = " << rc_variant_name(spec.rc.variant) << '\n';
  head << "reduction = " << spec.rc.reduction << '\n';
  head << "mid_activation = " << mid_activation_name(spec.rc.mid_activation) << '\n';
  head << "rc_cdf = " << cdf_mode_name(spec.rc.cdf_mode) << '\n';
  head << "seed = " << meta.seed << '\n';
  head << "epoch = " << meta.epoch << '\n';
  head << "norm_mean = " << hex_double(meta.stats.mean[0]) << ' ' << hex_double(meta.stats.mean[1]) << ' '
       << hex_double(meta.stats.mean[2]) << '\n';
  head << "norm_std = " << hex_double(meta.stats.std[0]) << ' ' << hex_double(meta.stats.std[1]) << ' '
       << hex_double(meta.stats.std[2]) << '\n';
  for (const auto& [k, v] : meta.extra) head << "extra." << k << " = " << v << '\n';

  std::string blob;
  for (const auto& p : model.parameters()) {
    head << "tensor " << p.name << ' ' << p.tensor.size() << '\n';
    for (double v : p.tensor.data()) put_f64(blob, v);
  }
  for (const auto& b : model.buffers()) {
    head << "buffer " << b.name << ' ' << b.values->size() << '\n';
    for (double v : *b.values) put_f64(blob, v);
  }
  head << "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string text = head.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw FormatError(path.string() + ": not a rescal checkpoint");

  ModelSpec spec;
  CheckpointMeta meta;
  struct Entry {
    bool buffer;
    std::string name;
    std::size_t count;
  };
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "tensor" || word == "buffer") {
      Entry e{word == "buffer", {}, 0};
      if (!(ls >> e.name >> e.count)) throw FormatError("bad index line '" + line + "'");
      entries.push_back(e);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad manifest line '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "depth") spec.depth = std::stoi(value);
    else if (key == "classes") spec.num_classes = std::stoi(value);
    else if (key == "variant") spec.variant = parse_variant(value);
    else if (key == "cdf") spec.cdf_mode = parse_cdf_mode(value);
    else if (key == "rc_variant") spec.rc.variant = parse_rc_variant(value);
    else if (key == "reduction") spec.rc.reduction = std::stoul(value);
    else if (key == "mid_activation") spec.rc.mid_activation = parse_mid_activation(value);
    else if (key == "rc_cdf") spec.rc.cdf_mode = parse_cdf_mode(value);
    else if (key == "seed") meta.seed = std::stoull(value);
    else if (key == "epoch") meta.epoch = std::stoi(value);
    else if (key == "norm_mean" || key == "norm_std") {
      std::istringstream vs(value);
      auto& target = key == "norm_mean" ? meta.stats.mean : meta.stats.std;
      for (double& t : target) {
        std::string tok;
        if (!(vs >> tok)) throw FormatError("short " + key + " in checkpoint");
        t = parse_hex_double(tok);
      }
    } else if (key.rfind("extra.", 0) == 0) {
      meta.extra[key.substr(6)] = value;
    } else {
      throw FormatError("unknown manifest key '" + key + "'");
    }
  }
  if (!ended) throw FormatError(path.string() + ": manifest has no end marker");

  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Model model(spec, meta.seed);
  auto params = model.parameters();
  auto buffers = model.buffers();
  if (entries.size() != params.size() + buffers.size()) throw FormatError("checkpoint tensor index does not match model");
  std::size_t offset = 0;
  auto take = [&](std::span<double> dst, const Entry& e, const std::string& expect_name, bool expect_buffer) {
    if (e.name != expect_name || e.buffer != expect_buffer || e.count != dst.size()) {
      throw FormatError("checkpoint entry '" + e.name + "' does not match model entry '" + expect_name + "'");
    }
    if (blob.size() < offset + 8 * dst.size()) throw FormatError("checkpoint blob is truncated");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f64(blob.data() + offset + 8 * i);
    offset += 8 * dst.size();
  };
  for (std::size_t i = 0; i < params.size(); ++i) take(params[i].tensor.mutable_data(), entries[i], params[i].name, false);
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    take(*buffers[i].values, entries[params.size() + i], buffers[i].name, true);
  }
  if (offset != blob.size()) throw FormatError("checkpoint blob has trailing bytes");
  return {std::move(model), meta};
}

std::pair<Dataset, Dataset> load_data(const DataSource& source, int num_classes, std::uint64_t seed) {
  auto limit = [](Dataset d, std::size_t n) { return n == 0 ? d : take_first(d, n); };
  switch (source.kind) {
    case DatasetKind::synth: {
      Dataset train_set = synth_dataset(source.synth_train, num_classes, seed, 0);
      Dataset test_set = synth_dataset(source.synth_test, num_classes, seed, 1);
      return {std::move(train_set), std::move(test_set)};
    }
    case DatasetKind::cifar10: {
      std::vector<std::filesystem::path> train_files;
      Dataset train_set;
      train_set.class_count = 10;
      for (int i = 1; i <= 5; ++i) {
        if (source.train_limit != 0 && train_set.size() >= source.train_limit) break;
        const auto p = source.dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (!std::filesystem::exists(p)) {
          if (i == 1) throw IoError("missing CIFAR-10 batch " + p.string());
          break;
        }
        std::vector<std::filesystem::path> one{p};
        Dataset part = read_cifar10(one);
        train_set.pixels.insert(train_set.pixels.end(), part.pixels.begin(), part.pixels.end());
        train_set.labels.insert(train_set.labels.end(), part.labels.begin(), part.labels.end());
      }
      std::vector<std::filesystem::path> test_files{source.dir / "test_batch.bin"};
      return {limit(std::move(train_set), source.train_limit), limit(read_cifar10(test_files), source.test_limit)};
    }
    case DatasetKind::cifar100: {
      std::vector<std::filesystem::path> train_files{source.dir / "train.bin"};
      std::vector<std::filesystem::path> test_files{source.dir / "test.bin"};
      return {limit(read_cifar100(train_files), source.train_limit), limit(read_cifar100(test_files), source.test_limit)};
    }
  }
  throw ConfigError("unknown dataset kind");
}

}  // namespace rescal
