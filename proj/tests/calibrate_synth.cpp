// scratch calibration harness, not registered with ctest
#include <chrono>
#include <cstdio>

#include "neurocam/channels.hpp"
#include "neurocam/gradcam.hpp"
#include "neurocam/stats.hpp"
#include "neurocam/synth.hpp"
#include "neurocam/training.hpp"

using namespace neurocam;
using clock_type = std::chrono::steady_clock;

int main(int argc, char** argv) {
  const std::size_t epochs = argc > 1 ? std::stoul(argv[1]) : 20;
  const std::size_t k = argc > 2 ? std::stoul(argv[2]) : 16;
  const std::size_t trials = argc > 3 ? std::stoul(argv[3]) : 200;
  const std::uint64_t seed = argc > 4 ? std::stoull(argv[4]) : 0;

  MontageLayout montage = load_montage_csv(std::string(NEUROCAM_DATA_DIR) + "/montage_64.csv");
  SynthSpec spec;
  spec.n_trials_per_class = trials;
  spec.seed = RngState{seed * 1000 + 5, 0};
  auto t0 = clock_type::now();
  auto [set, truth] = generate_synth(spec, montage);
  auto t1 = clock_type::now();
  std::printf("generate: %.1fs (%zu epochs)\n",
              std::chrono::duration<double>(t1 - t0).count(), set.n_epochs);

  auto [train_set, test_set] = split_dataset(set, 0.25, RngState{seed + 42, 0});
  NormStats stats = zscore_normalize(train_set);
  zscore_normalize(test_set, stats);

  ConformerConfig cfg;
  cfg.n_channels = 64;
  cfg.n_times = 160;
  cfg.n_feature_maps = k;
  cfg.encoder_depth = 1;
  cfg.heads = 4;
  cfg.classifier_hidden = 32;
  cfg.dropout_p = 0.25;
  ModelParams params = build(cfg, RngState{seed + 7, 0});

  Hyperparams hp;
  hp.learning_rate = argc > 5 ? std::stod(argv[5]) : 1e-3;
  cfg.dropout_p = argc > 6 ? std::stod(argv[6]) : 0.25;
  params = build(cfg, RngState{seed + 7, 0});
  if (argc > 7 && std::stoi(argv[7])) {  // small-head-init experiment
    for (auto& v : params.at("head.w2").values()) v *= 0.05;
    for (auto& v : params.at("head.w1").values()) v *= 0.5;
  }
  hp.batch_size = 32;
  hp.epochs = epochs;
  hp.seed = RngState{seed + 9, 0};
  auto t2 = clock_type::now();
  TrainHistory hist = train(params, train_set, hp);
  auto t3 = clock_type::now();
  for (std::size_t e = 0; e < hist.loss.size(); e += 3)
    std::printf("  epoch %2zu loss %.4f acc %.1f\n", e, hist.loss[e], hist.train_acc[e]);
  SubjectMetrics m = evaluate(params, test_set, chance_level(static_cast<int>(test_set.n_epochs)));
  std::printf("train: %.1fs  final train acc %.1f  loss %.4f  test acc %.2f (n=%d)\n",
              std::chrono::duration<double>(t3 - t2).count(), hist.train_acc.back(),
              hist.loss.back(), m.overall_acc, m.n_test);

  // explain correctly predicted test epochs
  Prediction pred = predict(params, test_set);
  auto t4 = clock_type::now();
  std::vector<RelevanceMap> left_maps, right_maps;
  for (std::size_t e = 0; e < test_set.n_epochs; ++e) {
    if (pred.labels[e] != test_set.labels[e]) continue;
    auto& dst = test_set.labels[e] == ClassLabel::Left ? left_maps : right_maps;
    dst.push_back(grad_cam(params, test_set, e, test_set.labels[e]));
  }
  auto t5 = clock_type::now();
  ChannelRanking left_rank = channel_relevance(left_maps, test_set.channel_labels);
  ChannelRanking right_rank = channel_relevance(right_maps, test_set.channel_labels);
  std::printf("explain: %.1fs (%zu+%zu maps)\n",
              std::chrono::duration<double>(t5 - t4).count(), left_maps.size(),
              right_maps.size());
  auto show = [](const char* name, const ChannelRanking& r) {
    std::printf("%s top-10:", name);
    for (std::size_t i = 0; i < 10; ++i) std::printf(" %s", r.order[i].c_str());
    std::printf("\n");
  };
  show("left ", left_rank);
  show("right", right_rank);
  auto hit = [](const ChannelRanking& r, const std::vector<std::string>& want) {
    std::size_t n = 0;
    for (const auto& label : want)
      if (std::find(r.order.begin(), r.order.begin() + 10, label) != r.order.begin() + 10) ++n;
    return n;
  };
  std::printf("planted in top-10: left %zu/2 right %zu/2\n", hit(left_rank, truth.left_class_channels),
              hit(right_rank, truth.right_class_channels));
  return 0;
}
