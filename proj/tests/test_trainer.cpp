#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rescal/errors.hpp"
#include "rescal/trainer.hpp"
#include "support.hpp"

using namespace rescal;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.warmup_epochs = epochs > 1 ? 1 : 0;
  c.base_lr = 0.05;
  c.batch_size = 32;
  c.seed = 11;
  c.model.depth = 8;
  c.model.num_classes = 10;
  return c;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("rescal_trainer_" + name); }

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void zero_classifier(Model& m) {
  for (auto& p : m.parameters())
    if (p.name.starts_with("fc."))
      for (double& v : p.tensor.mutable_data()) v = 0.0;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("cosine schedule landmarks") {
    TrainConfig c;
    c.epochs = 15;
    c.warmup_epochs = 4;
    c.base_lr = 0.1;
    c.min_lr = 0.001;
    CHECK(lr_at(c, 0) == doctest::Approx(0.025).epsilon(1e-15));
    CHECK(lr_at(c, 3) == 0.1);
    CHECK(lr_at(c, 4) == 0.1);
    CHECK(std::abs(lr_at(c, 9) - 0.0505) < 1e-15);
    CHECK(std::abs(lr_at(c, 14) - 0.001) < 1e-15);
    for (int e = 5; e < 15; ++e) CHECK(lr_at(c, e) < lr_at(c, e - 1));
    // the cosine term against its own closed form
    for (int e = 4; e < 15; ++e) {
      const double t = e - 4, span = 10;
      CHECK(std::abs(lr_at(c, e) - (0.001 + 0.5 * 0.099 * (1 + std::cos(std::numbers::pi * t / span)))) < 1e-15);
    }
    CHECK_THROWS_AS(lr_at(c, 15), ContractError);
    CHECK_THROWS_AS(lr_at(c, -1), ContractError);
  }

  TEST_CASE("warmup joins the cosine without a jump") {
    TrainConfig c;
    c.epochs = 200;
    c.warmup_epochs = 5;
    c.base_lr = 0.1;
    for (int e = 0; e < 5; ++e) CHECK(std::abs(lr_at(c, e) - 0.1 * (e + 1) / 5.0) < 1e-15);
    CHECK(lr_at(c, 4) == lr_at(c, 5));
    double worst = 0;
    for (int e = 5; e < 200; ++e) worst = std::max(worst, std::abs(lr_at(c, e) - lr_at(c, e - 1)));
    CHECK(worst < 0.1 * std::numbers::pi / 194.0 / 2.0 + 1e-12);
  }

  TEST_CASE("step schedule") {
    TrainConfig c;
    c.epochs = 30;
    c.warmup_epochs = 0;
    c.schedule = Schedule::step;
    c.step_milestones = {10, 20};
    c.step_gamma = 0.1;
    CHECK(lr_at(c, 0) == 0.1);
    CHECK(lr_at(c, 9) == 0.1);
    CHECK(std::abs(lr_at(c, 10) - 0.01) < 1e-17);
    CHECK(std::abs(lr_at(c, 29) - 0.001) < 1e-17);
  }

  TEST_CASE("sgd examples") {
    std::vector<double> p{1.0, -2.0}, v{0.0, 0.0};
    const std::vector<double> g{0.5, 0.25};
    sgd_step(p, g, v, {0.1, 0.0, 0.0});
    CHECK(p == std::vector<double>{1.0 - 0.05, -2.0 - 0.025});

    std::vector<double> q{3.0}, vq{0.0};
    const std::vector<double> zero{0.0};
    sgd_step(q, zero, vq, {1.0, 0.0, 0.1});
    CHECK(std::abs(q[0] - 2.7) < 1e-15);

    std::vector<double> bad{1.0};
    CHECK_THROWS_AS(sgd_step(bad, g, v, {}), ShapeError);
  }

  TEST_CASE("three momentum steps against the unrolled recurrence") {
    const double lr = 0.1, mu = 0.9, wd = 0.01;
    const double g[3] = {1.0, -0.5, 0.25};
    std::vector<double> p{2.0}, v{0.0};
    for (double gi : g) {
      const std::vector<double> gv{gi};
      sgd_step(p, gv, v, {lr, mu, wd});
    }
    const double p0 = 2.0;
    const double v1 = g[0] + wd * p0, p1 = p0 - lr * v1;
    const double v2 = mu * v1 + g[1] + wd * p1, p2 = p1 - lr * v2;
    const double v3 = mu * v2 + g[2] + wd * p2, p3 = p2 - lr * v3;
    CHECK(std::abs(p[0] - p3) < 1e-12);
    CHECK(std::abs(v[0] - v3) < 1e-12);
  }

  TEST_CASE("optimizer skips decay on flagged parameters and freezes at lr 0") {
    Tensor w = Tensor::full({2}, 1.0, true), b = Tensor::full({2}, 1.0, true);
    SgdOptimizer opt({{"w", w, true}, {"b", b, false}}, 0.0, 0.5);
    opt.step(1.0);
    CHECK(w.data()[0] == 0.5);
    CHECK(b.data()[0] == 1.0);

    Model m(small_config(1).model, 2);
    std::vector<std::vector<double>> before;
    for (const auto& p : m.parameters()) before.push_back(fixture::to_vector(p.tensor));
    for (auto& p : m.parameters()) p.tensor.set_requires_grad(true);
    SgdOptimizer frozen(m.parameters(), 0.9, 5e-4);
    Rng rng(1);
    const Tensor images = fixture::normal({2, 3, 8, 8}, rng);
    {
      Tape tape;
      Tape::Scope scope(tape);
      const Tensor loss = cross_entropy(m.forward(images, NormMode::train), std::vector<int>{1, 2});
      tape.backward(loss);
    }
    frozen.step(0.0);
    const auto after = m.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(fixture::to_vector(after[i].tensor) == before[i]);
  }

  TEST_CASE("top-k tie rule") {
    const double flat[] = {0.0, 0.0, 0.0, 0.0};
    CHECK(in_top_k(flat, 0, 1));
    CHECK_FALSE(in_top_k(flat, 1, 1));
    CHECK(in_top_k(flat, 1, 2));
    const double mixed[] = {0.1, 0.5, 0.5, -1.0};
    CHECK(in_top_k(mixed, 1, 1));
    CHECK_FALSE(in_top_k(mixed, 2, 1));
    CHECK(in_top_k(mixed, 0, 3));
    CHECK_FALSE(in_top_k(mixed, 3, 3));

    const Dataset ds = synth_dataset(100, 10, 1);
    Model m(small_config(1).model, 0);
    zero_classifier(m);
    const Metrics metrics = evaluate(m, ds, training_norm_stats(ds));
    CHECK(metrics.top1() == 0.1);
    CHECK(metrics.top_k.at(5) == 0.5);
    CHECK(std::abs(metrics.loss - std::log(10.0)) < 1e-12);
  }

  TEST_CASE("training lowers the loss and is reproducible") {
    const Dataset train_set = synth_dataset(100, 10, 21);
    const Dataset test_set = synth_dataset(50, 10, 21, 1);
    TrainConfig c = small_config(5);
    Model a(c.model, c.seed);
    const RunHistory h = train(a, train_set, test_set, c);
    REQUIRE(h.epochs.size() == 5);
    CHECK(h.epochs.back().train_loss < h.initial_loss);
    CHECK(h.step_losses.size() == 5 * 4);
    for (const auto& r : h.epochs) {
      CHECK(r.lr == lr_at(c, r.epoch));
      CHECK(r.train_acc >= 0.0);
      CHECK(r.test_acc <= 1.0);
    }
    const Metrics m = evaluate(a, test_set, training_norm_stats(train_set));
    CHECK(m.top_k.at(5) >= m.top1());
    CHECK(m.top1() == h.epochs.back().test_acc);

    TrainConfig shorter = small_config(2);
    Model b(shorter.model, shorter.seed), d(shorter.model, shorter.seed);
    const RunHistory hb = train(b, train_set, test_set, shorter);
    const RunHistory hd = train(d, train_set, test_set, shorter);
    CHECK(hb.step_losses == hd.step_losses);
    for (std::size_t i = 0; i < 2; ++i) CHECK(hb.epochs[i].test_acc == hd.epochs[i].test_acc);
  }

  TEST_CASE("zero epochs leave the model alone") {
    const Dataset ds = synth_dataset(20, 10, 1);
    TrainConfig c = small_config(0);
    c.warmup_epochs = 0;
    Model m(c.model, 3);
    const auto before = m.parameters();
    std::vector<std::vector<double>> saved;
    for (const auto& p : before) saved.push_back(fixture::to_vector(p.tensor));
    const RunHistory h = train(m, ds, ds, c);
    CHECK(h.epochs.empty());
    const auto after = m.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(fixture::to_vector(after[i].tensor) == saved[i]);
  }

  TEST_CASE("class count mismatch and non-finite loss") {
    const Dataset ds = synth_dataset(20, 5, 1);
    TrainConfig c = small_config(1);
    Model m(c.model, 3);
    CHECK_THROWS_AS(train(m, ds, ds, c), ContractError);

    const Dataset ten = synth_dataset(20, 10, 1);
    for (auto& p : m.parameters())
      if (p.name == "fc.bias") p.tensor.mutable_data()[0] = std::nan("");
    try {
      train(m, ten, ten, c);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      const std::string what = e.what();
      CHECK(what.find("epoch 0") != std::string::npos);
      CHECK(what.find("step 0") != std::string::npos);
    }
  }

  TEST_CASE("checkpoint round trip reproduces logits bitwise") {
    const Dataset ds = synth_dataset(40, 10, 4);
    TrainConfig c = small_config(1);
    c.model.variant = Variant::rescnet;
    c.model.cdf_mode = CdfMode::tanh_approx;
    c.model.rc.cdf_mode = CdfMode::tanh_approx;
    Model m(c.model, 5);
    train(m, ds, ds, c);
    CheckpointMeta meta;
    meta.seed = 5;
    meta.epoch = 1;
    meta.stats = training_norm_stats(ds);
    meta.extra["note"] = "round trip";
    const fs::path path = temp_path("ckpt.bin");
    save_checkpoint(path, m, meta);
    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.meta.epoch == 1);
    CHECK(loaded.meta.extra.at("note") == "round trip");
    CHECK(loaded.meta.stats.mean == meta.stats.mean);
    CHECK(loaded.meta.stats.std == meta.stats.std);
    CHECK(loaded.model.spec().variant == Variant::rescnet);
    CHECK(loaded.model.spec().cdf_mode == CdfMode::tanh_approx);
    const std::size_t idx[] = {0, 1, 2};
    Rng rng(0);
    const Tensor batch = normalize_augment(gather_images(ds, idx), meta.stats, Augment::none, rng);
    CHECK(fixture::to_vector(loaded.model.forward(batch, NormMode::eval)) ==
          fixture::to_vector(m.forward(batch, NormMode::eval)));

    // truncated and padded files are rejected
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 8);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    fs::resize_file(path, size + 8);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    fs::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }

  TEST_CASE("history csv") {
    RunHistory h;
    h.epochs.push_back({0, 2.5, 0.25, 0.125, 0.1, 1.5});
    const fs::path path = temp_path("history.csv");
    write_history_csv(h, path);
    CHECK(read_text(path) == "epoch,train_loss,train_acc,test_acc,lr,seconds\n0,2.5,0.25,0.125,0.1,1.5\n");
    fs::remove(path);
  }

  TEST_CASE("config parsing") {
    const TrainConfig c = parse_train_config(
        "# desk run\n"
        "epochs = 12\n"
        "warmup_epochs = 2   # short\n"
        "base_lr = 0.05\n"
        "schedule = step\n"
        "milestones = 4, 8\n"
        "gamma = 0.5\n"
        "variant = rescnet\n"
        "depth = 20\n"
        "cdf = sigmoid\n"
        "dataset = synth\n"
        "augment = none\n");
    CHECK(c.epochs == 12);
    CHECK(c.warmup_epochs == 2);
    CHECK(c.base_lr == 0.05);
    CHECK(c.schedule == Schedule::step);
    CHECK(c.step_milestones == std::vector<int>{4, 8});
    CHECK(c.step_gamma == 0.5);
    CHECK(c.model.variant == Variant::rescnet);
    CHECK(c.model.depth == 20);
    CHECK(c.model.cdf_mode == CdfMode::sigmoid_approx);
    CHECK(c.model.rc.cdf_mode == CdfMode::sigmoid_approx);
    CHECK(c.data.kind == DatasetKind::synth);
    CHECK(c.augment == Augment::none);

    CHECK_THROWS_AS(parse_train_config("learning_rate = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("epochs = ten\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("epochs = 5\nwarmup_epochs = 5\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("base_lr = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("batch_size = 0\n"), ConfigError);
    try {
      load_train_config(temp_path("missing.cfg"));
      FAIL("expected an io error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("missing.cfg") != std::string::npos);
    }
  }
}
