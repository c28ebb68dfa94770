// rescal: train / evaluate / inspect calibrated residual networks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rescal/analysis.hpp"
#include "rescal/errors.hpp"
#include "rescal/grad_targets.hpp"
#include "rescal/model.hpp"
#include "rescal/trainer.hpp"

namespace fs = std::filesystem;
using namespace rescal;

namespace {

constexpr double kGradTolerance = 1e-4;

struct ModelFlags {
  int depth = 32;
  int classes = 10;
  std::string variant = "plain";
  std::size_t reduction = 4;
  std::string rc_variant = "three_fc";
  std::string mid_activation = "none";
  std::string cdf = "exact";

  void attach(CLI::App& app) {
    app.add_option("--depth", depth, "network depth, 6n+2")->capture_default_str();
    app.add_option("--classes", classes, "number of classes")->capture_default_str();
    app.add_option("--variant", variant, "plain|rescnet|gclu_parallel")->capture_default_str();
    app.add_option("--reduction", reduction, "RC layer reduction ratio")->capture_default_str();
    app.add_option("--rc-variant", rc_variant, "two_fc|three_fc")->capture_default_str();
    app.add_option("--mid-activation", mid_activation, "none|relu|sigmoid")->capture_default_str();
    app.add_option("--cdf,--mode", cdf, "exact|sigmoid|tanh")->capture_default_str();
  }

  ModelSpec spec() const {
    ModelSpec s;
    s.depth = depth;
    s.num_classes = classes;
    s.variant = parse_variant(variant);
    s.cdf_mode = parse_cdf_mode(cdf);
    s.rc.reduction = reduction;
    s.rc.variant = parse_rc_variant(rc_variant);
    s.rc.mid_activation = parse_mid_activation(mid_activation);
    s.rc.cdf_mode = s.cdf_mode;
    validate(s);
    return s;
  }
};

struct DataFlags {
  std::string dataset = "cifar10";
  std::string data_dir;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t synth_train = 1000;
  std::size_t synth_test = 200;

  void attach(CLI::App& app) {
    app.add_option("--dataset", dataset, "cifar10|cifar100|synth")->capture_default_str();
    app.add_option("--data-dir", data_dir, "directory with the CIFAR binary batches");
    app.add_option("--train-limit", train_limit, "use only the first N training records (0 = all)");
    app.add_option("--test-limit", test_limit, "use only the first N test records (0 = all)");
    app.add_option("--synth-train", synth_train, "synthetic training set size")->capture_default_str();
    app.add_option("--synth-test", synth_test, "synthetic test set size")->capture_default_str();
  }

  DataSource source() const {
    DataSource s;
    s.kind = parse_dataset_kind(dataset);
    s.dir = data_dir;
    s.train_limit = train_limit;
    s.test_limit = test_limit;
    s.synth_train = synth_train;
    s.synth_test = synth_test;
    return s;
  }
};

void print_epoch(const EpochRecord& r) {
  std::printf("epoch %3d  lr %.5f  loss %.4f  train_acc %.4f  test_acc %.4f  (%.1fs)\n", r.epoch, r.lr,
              r.train_loss, r.train_acc, r.test_acc, r.seconds);
  std::fflush(stdout);
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_filename(out.stem().string() + suffix + ".csv");
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual networks with Gaussian response calibration"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file and/or flags");
  std::string config_path;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> epochs;
  std::string history_out, train_checkpoint, train_dataset, train_data_dir;
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--seed", train_seed, "override the config seed");
  train_cmd->add_option("--epochs", epochs, "override the number of epochs");
  train_cmd->add_option("--dataset", train_dataset, "override the dataset (cifar10|cifar100|synth)");
  train_cmd->add_option("--data-dir", train_data_dir, "override the data directory");
  train_cmd->add_option("--out", history_out, "history CSV path");
  train_cmd->add_option("--checkpoint", train_checkpoint, "checkpoint output path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint;
  DataFlags eval_data;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--seed", eval_seed, "seed for synthetic data")->capture_default_str();
  eval_data.attach(*eval_cmd);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "compare taped gradients with central differences");
  std::string target = "gclu", grad_mode = "exact";
  std::optional<std::size_t> points;
  std::uint64_t grad_seed = 0;
  GradCheckOptions grad_options;
  grad_cmd->add_option("--target", target, "gclu|weight|value|rc_layer|block|model")->capture_default_str();
  grad_cmd->add_option("--cdf,--mode", grad_mode, "exact|sigmoid|tanh")->capture_default_str();
  grad_cmd->add_option("--points", points, "random points to check (default 100, 5 for model)");
  grad_cmd->add_option("--seed", grad_seed, "RNG seed")->capture_default_str();
  grad_cmd->add_option("--step", grad_options.h, "finite-difference step h")->capture_default_str();
  grad_cmd->add_option("--kink-margin", grad_options.kink_margin_factor, "exclude points within this many steps of a kink")
      ->capture_default_str();

  // export-dist
  auto* export_cmd = app.add_subcommand("export-dist", "export post-GAP feature distributions as CSV");
  std::string export_checkpoint, export_out = "dist.csv", split = "test";
  std::uint64_t export_seed = 0;
  std::size_t export_limit = 0;
  ModelFlags export_model;
  DataFlags export_data;
  export_cmd->add_option("--checkpoint", export_checkpoint, "trained checkpoint (otherwise a fresh model)");
  export_cmd->add_option("--seed", export_seed, "model / synthetic data seed")->capture_default_str();
  export_cmd->add_option("--out", export_out, "matrix CSV; _summary and _ks CSVs go alongside")
      ->capture_default_str();
  export_cmd->add_option("--split", split, "train|test")->capture_default_str();
  export_cmd->add_option("--limit", export_limit, "first N images of the split (0 = all)");
  export_model.attach(*export_cmd);
  export_data.attach(*export_cmd);

  // bench-cdf
  auto* bench_cmd = app.add_subcommand("bench-cdf", "accuracy and speed of the CDF approximations");
  std::vector<std::string> modes{"exact", "sigmoid", "tanh"};
  std::size_t evaluations = 10'000'000;
  std::string bench_out;
  bench_cmd->add_option("--modes", modes, "modes to benchmark")->capture_default_str();
  bench_cmd->add_option("--evaluations", evaluations, "gclu calls timed per mode")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "CSV report path");

  // count-params
  auto* count_cmd = app.add_subcommand("count-params", "print the parameter count of a model");
  ModelFlags count_model;
  count_model.attach(*count_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*train_cmd) {
      TrainConfig config = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
      if (train_seed) config.seed = *train_seed;
      if (epochs) config.epochs = *epochs;
      if (!train_dataset.empty()) config.data.kind = parse_dataset_kind(train_dataset);
      if (!train_data_dir.empty()) config.data.dir = train_data_dir;
      if (!history_out.empty()) config.history_path = history_out;
      if (!train_checkpoint.empty()) config.checkpoint_path = train_checkpoint;
      validate(config);
      auto [train_set, test_set] = load_data(config.data, config.model.num_classes, config.seed);
      Model model(config.model, config.seed);
      std::printf("model %s-%d, %zu parameters, %zu train / %zu test images\n",
                  std::string(variant_name(config.model.variant)).c_str(), config.model.depth, count_params(model),
                  train_set.size(), test_set.size());
      const RunHistory h = train(model, train_set, test_set, config, {print_epoch});
      std::printf("initial_loss %.6f\n", h.initial_loss);
      if (!h.epochs.empty()) std::printf("final_test_acc %.4f\n", h.epochs.back().test_acc);
      return 0;
    }
    if (*eval_cmd) {
      LoadedCheckpoint ck = load_checkpoint(eval_checkpoint);
      auto [train_set, test_set] = load_data(eval_data.source(), ck.model.spec().num_classes, eval_seed);
      const Metrics m = evaluate(ck.model, test_set, ck.meta.stats, {1, 5});
      std::printf("images %zu\nloss %.6f\ntop1 %.4f\ntop5 %.4f\n", test_set.size(), m.loss, m.top_k.at(1),
                  m.top_k.at(5));
      return 0;
    }
    if (*grad_cmd) {
      const GradTarget t = parse_grad_target(target);
      const CdfMode mode = parse_cdf_mode(grad_mode);
      const std::size_t n = points.value_or(t == GradTarget::model ? 5 : 100);
      const GradTargetReport r = run_grad_target(t, mode, n, grad_seed, grad_options);
      const bool ok = r.points_checked == n && r.max_rel_error < kGradTolerance;
      std::printf("target %s mode %s points %zu excluded %zu coordinates %zu max_rel_error %.3e "
                  "(analytic %.6e numeric %.6e) raw %.3e resolution %.1e %s\n",
                  std::string(grad_target_name(t)).c_str(), std::string(cdf_mode_name(mode)).c_str(),
                  r.points_checked, r.points_excluded, r.coordinates, r.max_rel_error, r.worst_analytic,
                  r.worst_numeric, r.raw_max_rel_error, r.max_resolution, ok ? "PASS" : "FAIL");
      return ok ? 0 : 1;
    }
    if (*export_cmd) {
      std::optional<LoadedCheckpoint> ck;
      if (!export_checkpoint.empty()) ck.emplace(load_checkpoint(export_checkpoint));
      Model model = ck ? std::move(ck->model) : Model(export_model.spec(), export_seed);
      auto [train_set, test_set] = load_data(export_data.source(), model.spec().num_classes, export_seed);
      if (split != "train" && split != "test") throw ConfigError("--split must be train or test");
      const NormStats stats = ck ? ck->meta.stats : compute_norm_stats(train_set);
      Dataset data = split == "train" ? std::move(train_set) : std::move(test_set);
      if (export_limit != 0) data = take_first(data, export_limit);
      const DistMatrix m = collect_distributions(model, data, stats);
      const fs::path out = export_out;
      write_dist_csv(m, out);
      write_summary_csv(summarize_channels(m), sibling(out, "_summary"));
      std::printf("wrote %s (%zu rows, %zu channels)\n", out.string().c_str(), m.samples, m.channels);
      std::printf("wrote %s\n", sibling(out, "_summary").string().c_str());
      if (m.samples >= kMinNormalitySamples) {
        const auto ks = channel_normality(m);
        write_normality_csv(ks, sibling(out, "_ks"));
        double lo = 1.0, hi = 0.0, total = 0.0;
        std::size_t degenerate = 0;
        for (const auto& r : ks) {
          lo = std::min(lo, r.ks_distance);
          hi = std::max(hi, r.ks_distance);
          total += r.ks_distance;
          degenerate += r.degenerate ? 1 : 0;
        }
        std::printf("wrote %s\nks_distance min %.4f mean %.4f max %.4f degenerate %zu\n",
                    sibling(out, "_ks").string().c_str(), lo, total / static_cast<double>(ks.size()), hi,
                    degenerate);
      } else {
        std::printf("normality diagnostic skipped: needs at least %zu samples\n", kMinNormalitySamples);
      }
      return 0;
    }
    if (*bench_cmd) {
      std::vector<CdfMode> parsed;
      for (const auto& m : modes) parsed.push_back(parse_cdf_mode(m));
      const auto rows = bench_cdf(parsed, evaluations);
      std::printf("%-8s %14s %12s\n", "mode", "sup_error", "seconds");
      for (const auto& r : rows) {
        std::printf("%-8s %14.6e %12.4f\n", std::string(cdf_mode_name(r.mode)).c_str(), r.sup_error, r.seconds);
      }
      if (!bench_out.empty()) write_bench_csv(rows, bench_out);
      return 0;
    }
    if (*count_cmd) {
      std::printf("%zu\n", count_params(count_model.spec()));
      return 0;
    }
  } catch (const rescal::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 2;
}
