#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "neurocam/training.hpp"

using namespace neurocam;

namespace {

ConformerConfig toy_config(std::size_t channels = 4, std::size_t times = 32) {
  ConformerConfig cfg;
  cfg.n_channels = channels;
  cfg.n_times = times;
  cfg.n_feature_maps = 8;
  cfg.temporal_kernel = 5;
  cfg.pool_len = 8;
  cfg.pool_stride = 4;
  cfg.encoder_depth = 1;
  cfg.heads = 2;
  cfg.classifier_hidden = 8;
  cfg.dropout_p = 0.1;
  return cfg;
}

// two Gaussian-mean classes, one epoch per trial
EpochSet separable_epochs(std::size_t per_class, const ConformerConfig& cfg, RngState rng,
                          double gap = 0.5) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.n_channels; ++c) names.push_back("ch" + std::to_string(c));
  EpochSet set = make_epoch_set(names, 160.0, cfg.n_times);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool left = i % 2 == 0;
    Epoch ep;
    ep.label = left ? ClassLabel::Left : ClassLabel::Right;
    ep.provenance = {1, 1, static_cast<int>(i), 0};
    ep.data.resize(cfg.n_channels * cfg.n_times);
    for (auto& v : ep.data) v = rng.normal() * 0.3 + (left ? gap : -gap);
    set.append(ep);
  }
  return set;
}

// windowed epochs: n_trials trials x windows_per_trial windows
EpochSet windowed_epochs(std::size_t n_trials, std::size_t windows_per_trial,
                         const ConformerConfig& cfg, RngState rng) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.n_channels; ++c) names.push_back("ch" + std::to_string(c));
  EpochSet set = make_epoch_set(names, 160.0, cfg.n_times);
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    for (std::size_t w = 0; w < windows_per_trial; ++w) {
      Epoch ep;
      ep.label = trial % 2 ? ClassLabel::Left : ClassLabel::Right;
      ep.provenance = {1, static_cast<int>(trial / 30), static_cast<int>(trial),
                       static_cast<int>(w)};
      ep.data.resize(cfg.n_channels * cfg.n_times);
      for (auto& v : ep.data) v = rng.uniform(-1, 1);
      set.append(ep);
    }
  }
  return set;
}

}  // namespace

TEST_CASE("split_dataset is stratified, trial-grouped, deterministic") {
  ConformerConfig cfg = toy_config();
  EpochSet set = windowed_epochs(93, 4, cfg, RngState{1, 0});
  REQUIRE(set.n_epochs == 372);

  auto [train_set, test_set] = split_dataset(set, 0.25, RngState{42, 0});
  CHECK(train_set.n_epochs + test_set.n_epochs == 372);
  CHECK(std::abs(static_cast<double>(test_set.n_epochs) - 93.0) <= 8.0);

  // group invariant: no trial contributes to both sides
  std::set<std::tuple<int, int, int>> train_groups, test_groups;
  for (const auto& p : train_set.provenance) train_groups.insert({p.subject, p.run, p.trial});
  for (const auto& p : test_set.provenance) test_groups.insert({p.subject, p.run, p.trial});
  for (const auto& g : test_groups) CHECK(train_groups.count(g) == 0);

  // stratification: both classes present on both sides, near-balanced
  auto count_left = [](const EpochSet& s) {
    std::size_t n = 0;
    for (auto l : s.labels)
      if (l == ClassLabel::Left) ++n;
    return n;
  };
  CHECK(count_left(test_set) > 0);
  CHECK(count_left(test_set) < test_set.n_epochs);
  CHECK(std::abs(static_cast<double>(count_left(test_set)) -
                 static_cast<double>(test_set.n_epochs) / 2.0) < 10.0);

  // determinism
  auto [train2, test2] = split_dataset(set, 0.25, RngState{42, 0});
  CHECK(train2.data == train_set.data);
  CHECK(test2.provenance.size() == test_set.provenance.size());

  auto [train3, test3] = split_dataset(set, 0.25, RngState{43, 0});
  CHECK(train3.data != train_set.data);  // different seed, different split
}

TEST_CASE("split_dataset degenerate inputs") {
  ConformerConfig cfg = toy_config();
  // 4 windows from a single trial: cannot stratify
  EpochSet one_trial = windowed_epochs(1, 4, cfg, RngState{2, 0});
  CHECK_THROWS(split_dataset(one_trial, 0.25, RngState{1, 0}));

  // a class absent
  EpochSet set = windowed_epochs(6, 2, cfg, RngState{3, 0});
  for (auto& l : set.labels) l = ClassLabel::Left;
  CHECK_THROWS(split_dataset(set, 0.25, RngState{1, 0}));

  CHECK_THROWS(split_dataset(set, 0.0, RngState{1, 0}));
  CHECK_THROWS(split_dataset(set, 1.0, RngState{1, 0}));
}

TEST_CASE("training learns a separable toy problem") {
  ConformerConfig cfg = toy_config();
  ModelParams params = build(cfg, RngState{7, 0});
  EpochSet train_set = separable_epochs(24, cfg, RngState{8, 0});
  Hyperparams hp;
  hp.learning_rate = 1e-3;
  hp.batch_size = 16;
  hp.epochs = 50;
  hp.seed = RngState{9, 0};
  TrainHistory hist = train(params, train_set, hp);
  REQUIRE(hist.loss.size() == 50);
  CHECK_FALSE(hist.aborted_nan);
  CHECK(hist.train_acc.back() >= 99.0);
  CHECK(hist.train_acc.back() >= hist.train_acc.front());
  for (double l : hist.loss) CHECK(std::isfinite(l));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  ConformerConfig cfg = toy_config();
  cfg.dropout_p = 0.0;  // deterministic forward so the loss sits flat
  ModelParams params = build(cfg, RngState{17, 0});
  auto before = params.at("conv_temporal.weight").values();
  EpochSet train_set = separable_epochs(8, cfg, RngState{18, 0});
  Hyperparams hp;
  hp.learning_rate = 0.0;
  hp.batch_size = 16;  // one full batch per epoch
  hp.epochs = 3;
  TrainHistory hist = train(params, train_set, hp);
  CHECK(params.at("conv_temporal.weight").values() == before);
  CHECK(hist.loss[0] == doctest::Approx(hist.loss[2]).epsilon(1e-9));
}

TEST_CASE("training is bit-deterministic under fixed seeds") {
  ConformerConfig cfg = toy_config();
  EpochSet train_set = separable_epochs(12, cfg, RngState{28, 0});
  Hyperparams hp;
  hp.batch_size = 8;
  hp.epochs = 4;
  hp.seed = RngState{5, 0};

  ModelParams p1 = build(cfg, RngState{27, 0});
  TrainHistory h1 = train(p1, train_set, hp);
  ModelParams p2 = build(cfg, RngState{27, 0});
  TrainHistory h2 = train(p2, train_set, hp);
  CHECK(h1.loss == h2.loss);
  CHECK(h1.train_acc == h2.train_acc);
  for (const auto& [name, t] : p1.tensors) CHECK(t.values() == p2.at(name).values());
}

TEST_CASE("evaluate arithmetic") {
  SUBCASE("published row: 46/53 left and 31/40 right") {
    std::vector<ClassLabel> truth, pred;
    for (int i = 0; i < 53; ++i) {
      truth.push_back(ClassLabel::Left);
      pred.push_back(i < 46 ? ClassLabel::Left : ClassLabel::Right);
    }
    for (int i = 0; i < 40; ++i) {
      truth.push_back(ClassLabel::Right);
      pred.push_back(i < 31 ? ClassLabel::Right : ClassLabel::Left);
    }
    SubjectMetrics m = metrics_from_predictions(pred, truth, 56.91, 42);
    CHECK(m.left_acc == doctest::Approx(86.79).epsilon(1e-4));
    CHECK(m.right_acc == doctest::Approx(77.50).epsilon(1e-4));
    CHECK(m.overall_acc == doctest::Approx(82.80).epsilon(1e-4));
    CHECK(m.n_test == 93);
    // overall is the count-weighted combination of the class accuracies
    CHECK(m.overall_acc ==
          doctest::Approx((53 * m.left_acc + 40 * m.right_acc) / 93.0).epsilon(1e-12));
  }
  SUBCASE("all correct") {
    std::vector<ClassLabel> truth{ClassLabel::Left, ClassLabel::Right, ClassLabel::Left};
    SubjectMetrics m = metrics_from_predictions(truth, truth, 50.0);
    CHECK(m.overall_acc == doctest::Approx(100.0));
    CHECK(m.left_acc == doctest::Approx(100.0));
    CHECK(m.right_acc == doctest::Approx(100.0));
  }
  SUBCASE("constant Left predictor") {
    std::vector<ClassLabel> truth;
    for (int i = 0; i < 6; ++i) truth.push_back(ClassLabel::Left);
    for (int i = 0; i < 4; ++i) truth.push_back(ClassLabel::Right);
    std::vector<ClassLabel> pred(10, ClassLabel::Left);
    SubjectMetrics m = metrics_from_predictions(pred, truth, 50.0);
    CHECK(m.left_acc == doctest::Approx(100.0));
    CHECK(m.right_acc == doctest::Approx(0.0));
    CHECK(m.overall_acc == doctest::Approx(60.0));
  }
}
