#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "neurocam/gradcam.hpp"

using namespace neurocam;

namespace {

ConformerConfig tiny_config() {
  ConformerConfig cfg;
  cfg.n_channels = 6;
  cfg.n_times = 40;
  cfg.n_feature_maps = 8;
  cfg.temporal_kernel = 7;
  cfg.pool_len = 10;
  cfg.pool_stride = 4;
  cfg.encoder_depth = 1;
  cfg.heads = 2;
  cfg.classifier_hidden = 8;
  cfg.dropout_p = 0.0;
  return cfg;
}

EpochSet random_epochs(const ConformerConfig& cfg, std::size_t n, RngState& rng) {
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < cfg.n_channels; ++c) labels.push_back("ch" + std::to_string(c));
  EpochSet set = make_epoch_set(labels, 160.0, cfg.n_times);
  for (std::size_t e = 0; e < n; ++e) {
    Epoch ep;
    ep.label = e % 2 ? ClassLabel::Left : ClassLabel::Right;
    ep.provenance = {1, 1, static_cast<int>(e), 0};
    ep.data.resize(cfg.n_channels * cfg.n_times);
    for (auto& v : ep.data) v = rng.uniform(-1, 1);
    set.append(ep);
  }
  return set;
}

}  // namespace

TEST_CASE("grad_cam_core hand arithmetic") {
  // k=1, A=[[1,-2],[3,0]], uniform gradient 0.5 over the 2x2 map:
  // w = sum of gradients = 2.0, coarse = ReLU(2A)
  std::vector<double> a{1, -2, 3, 0};
  std::vector<double> g(4, 0.5);
  GradCamCore core = grad_cam_core(a, g, 1, 2, 2);
  CHECK(core.z == 4);
  REQUIRE(core.weights.size() == 1);
  CHECK(core.weights[0] == doctest::Approx(2.0));
  CHECK(core.coarse[0] == doctest::Approx(2.0));
  CHECK(core.coarse[1] == doctest::Approx(0.0));  // ReLU clips negatives
  CHECK(core.coarse[2] == doctest::Approx(6.0));
  CHECK(core.coarse[3] == doctest::Approx(0.0));

  // everywhere-negative weighted sum gives an all-zero map
  std::vector<double> neg{-1, -2, -3, -4};
  GradCamCore zero = grad_cam_core(neg, g, 1, 2, 2);
  for (double v : zero.coarse) CHECK(v == 0.0);
}

TEST_CASE("global-average-pool + linear oracle recovers classifier weights") {
  // Y^c = sum_k W[c,k] * mean_ij A^k, so dY/dA^k_ij = W[c,k]/Z exactly
  const std::size_t k = 5, h = 3, w = 4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngState rng{seed + 1, 0};
    std::vector<double> av(k * h * w);
    for (auto& v : av) v = rng.uniform(-1, 1);
    Tensor a = Tensor::from_values({1, k, h, w}, av, true);
    std::vector<double> wv(k * 2);
    for (auto& v : wv) v = rng.uniform(-1, 1);
    Tensor weight = Tensor::from_values({k, 2}, wv);

    Tensor pooled = avg_pool2d(a, h, w, 1, 1);        // (1,k,1,1)
    Tensor logits = matmul(reshape(pooled, {1, k}), weight);
    const std::size_t target = seed % 2;
    backward(pick(logits, target));

    GradCamCore core = grad_cam_core(a.values(), a.grad(), k, h, w);
    for (std::size_t f = 0; f < k; ++f)
      CHECK(std::abs(core.weights[f] - wv[f * 2 + target]) < 1e-9);
    // coarse map equals ReLU of the weighted activation sum, elementwise
    for (std::size_t i = 0; i < h * w; ++i) {
      double expect = 0.0;
      for (std::size_t f = 0; f < k; ++f) expect += wv[f * 2 + target] * av[f * h * w + i];
      CHECK(core.coarse[i] == doctest::Approx(std::max(0.0, expect)).epsilon(1e-12));
    }
  }
}

TEST_CASE("upsample_bilinear") {
  SUBCASE("constant map stays constant") {
    std::vector<double> src(9, 2.0);
    auto dst = upsample_bilinear(src, 3, 3, 11, 17);
    for (double v : dst) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("electrode axis is untouched when already full resolution") {
    RngState rng{3, 0};
    std::vector<double> src(64 * 136);
    for (auto& v : src) v = rng.uniform(0, 1);
    src[37 * 136 + 80] = 3.0;  // dominant peak, as in a real relevance map
    auto dst = upsample_bilinear(src, 64, 136, 64, 160);
    // argmax row preserved
    auto row_of = [&](const std::vector<double>& m, std::size_t w) {
      std::size_t best = 0;
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] > m[best]) best = i;
      return best / w;
    };
    CHECK(row_of(dst, 160) == row_of(src, 136));
  }
  SUBCASE("corner alignment: corners map exactly") {
    std::vector<double> src{1, 2, 3, 4};
    auto dst = upsample_bilinear(src, 2, 2, 5, 5);
    CHECK(dst[0] == doctest::Approx(1));
    CHECK(dst[4] == doctest::Approx(2));
    CHECK(dst[20] == doctest::Approx(3));
    CHECK(dst[24] == doctest::Approx(4));
    CHECK(dst[12] == doctest::Approx(2.5));  // center = mean of corners
  }
  SUBCASE("single hot cell peaks within one source-cell radius") {
    std::vector<double> src(5 * 7, 0.0);
    src[2 * 7 + 3] = 1.0;
    auto dst = upsample_bilinear(src, 5, 7, 15, 21);
    std::size_t best = 0;
    for (std::size_t i = 0; i < dst.size(); ++i)
      if (dst[i] > dst[best]) best = i;
    const double by = static_cast<double>(best / 21) * 4.0 / 14.0;  // back to source coords
    const double bx = static_cast<double>(best % 21) * 6.0 / 20.0;
    CHECK(std::abs(by - 2.0) <= 1.0);
    CHECK(std::abs(bx - 3.0) <= 1.0);
  }
  SUBCASE("shrinking is rejected") {
    std::vector<double> src(16, 0.0);
    CHECK_THROWS(upsample_bilinear(src, 4, 4, 2, 8));
  }
}

TEST_CASE("grad_cam on the model: shape, nonnegativity, determinism") {
  ConformerConfig cfg = tiny_config();
  ModelParams params = build(cfg, RngState{5, 0});
  RngState rng{6, 0};
  EpochSet set = random_epochs(cfg, 2, rng);

  RelevanceMap map = grad_cam(params, set, 0, ClassLabel::Left);
  CHECK(map.n_channels == cfg.n_channels);
  CHECK(map.coarse_times == cfg.conv_out_times());
  CHECK(map.n_times == cfg.n_times);
  CHECK(map.fine.size() == cfg.n_channels * cfg.n_times);
  CHECK(map.z == cfg.n_channels * cfg.conv_out_times());
  for (double v : map.fine) CHECK(v >= 0.0);
  for (double v : map.coarse) CHECK(v >= 0.0);
  double wsum = 0.0;
  for (double v : map.weights) wsum += std::abs(v);
  CHECK(wsum > 0.0);  // gradient reached the hooked layer

  RelevanceMap again = grad_cam(params, set, 0, ClassLabel::Left);
  CHECK(again.fine == map.fine);
  CHECK(again.weights == map.weights);

  RelevanceMap other = grad_cam(params, set, 0, ClassLabel::Right);
  CHECK(other.fine != map.fine);  // class-discriminative

  CHECK_THROWS(grad_cam(params, set, 0, ClassLabel::Left, "no_such_hook"));
}

TEST_CASE("guided backprop gating") {
  SUBCASE("purely linear network: guided equals plain gradient") {
    RngState rng{7, 0};
    std::vector<double> w1(6 * 4), w2(4 * 1);
    for (auto& v : w1) v = rng.uniform(-1, 1);
    for (auto& v : w2) v = rng.uniform(-1, 1);
    Tensor W1 = Tensor::from_values({6, 4}, w1);
    Tensor W2 = Tensor::from_values({4, 1}, w2);
    auto run = [&](bool guided) {
      Tensor x = Tensor::from_values({1, 6}, {0.3, -0.2, 0.9, -0.8, 0.1, 0.5}, true);
      Tensor y = matmul(matmul(x, W1), W2);
      if (guided) {
        GuidedBackwardGuard guard;
        backward(pick(y, 0));
      } else {
        backward(pick(y, 0));
      }
      return x.grad();
    };
    CHECK(run(true) == run(false));
  }
  SUBCASE("single ELU with negative pre-activation contributes nothing") {
    Tensor x = Tensor::scalar(-1.0, true);
    Tensor y = elu(x);
    {
      GuidedBackwardGuard guard;
      backward(y);
    }
    CHECK(x.grad()[0] == 0.0);

    Tensor x2 = Tensor::scalar(-1.0, true);
    Tensor y2 = elu(x2);
    backward(y2);
    CHECK(x2.grad()[0] == doctest::Approx(std::exp(-1.0)));  // plain rule
  }
  SUBCASE("negative incoming gradient is gated even at positive activations") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = scale(elu(x), -1.0);  // incoming gradient at the ELU is -1
    {
      GuidedBackwardGuard guard;
      backward(y);
    }
    CHECK(x.grad()[0] == 0.0);
  }
  SUBCASE("guided support never exceeds plain support, 10 seeds") {
    ConformerConfig cfg = tiny_config();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      ModelParams params = build(cfg, RngState{seed + 50, 0});
      RngState rng{seed + 60, 0};
      EpochSet set = random_epochs(cfg, 1, rng);
      auto guided = guided_backprop(params, set, 0, ClassLabel::Left);

      zero_all_grads(params);
      RngState unused{0, 0};
      Tensor input = epochs_to_tensor(set, {0});
      input.set_requires_grad(true);
      Tensor logits = forward(params, input, false, unused);
      backward(pick(logits, 0));
      const auto plain = input.grad();
      zero_all_grads(params);

      for (std::size_t i = 0; i < guided.size(); ++i)
        if (guided[i] != 0.0) CHECK(plain[i] != 0.0);
    }
  }
}

TEST_CASE("guided_gradcam product") {
  std::vector<double> fine{1, 1, 1, 1};
  std::vector<double> guided{0.5, -0.25, 0.0, 2.0};
  CHECK(guided_gradcam(fine, guided) == guided);
  std::vector<double> zeros(4, 0.0);
  CHECK(guided_gradcam(zeros, guided) == zeros);
  std::vector<double> short_map{1.0};
  CHECK_THROWS(guided_gradcam(short_map, guided));
}

TEST_CASE("channel_relevance ranking") {
  std::vector<std::string> channels{"C3", "Cz", "C4"};
  auto one_hot_map = [&](std::size_t hot, double value) {
    RelevanceMap m;
    m.class_label = ClassLabel::Left;
    m.n_channels = 3;
    m.coarse_times = 4;
    m.n_times = 4;
    m.fine.assign(12, 0.0);
    for (std::size_t t = 0; t < 4; ++t) m.fine[hot * 4 + t] = value;
    return m;
  };
  SUBCASE("concentrated relevance ranks first") {
    auto r = channel_relevance({one_hot_map(0, 2.0)}, channels);
    CHECK(r.order.front() == "C3");
    CHECK(r.scores.at("C3") == doctest::Approx(2.0));
  }
  SUBCASE("swapped one-hot maps tie, broken by montage order") {
    auto r = channel_relevance({one_hot_map(0, 1.0), one_hot_map(2, 1.0)}, channels);
    CHECK(r.scores.at("C3") == doctest::Approx(r.scores.at("C4")));
    CHECK(r.order[0] == "C3");  // montage order wins the tie
    CHECK(r.order[1] == "C4");
  }
  SUBCASE("positive scaling leaves the order unchanged") {
    std::vector<RelevanceMap> maps{one_hot_map(1, 0.5), one_hot_map(0, 0.3)};
    auto r1 = channel_relevance(maps, channels);
    for (auto& m : maps)
      for (auto& v : m.fine) v *= 1234.5;
    auto r2 = channel_relevance(maps, channels);
    CHECK(r1.order == r2.order);
  }
  SUBCASE("empty input rejected") { CHECK_THROWS(channel_relevance({}, channels)); }
}

TEST_CASE("temporal_relevance windows") {
  auto map_from = [](const std::vector<double>& series) {
    RelevanceMap m;
    m.n_channels = 1;
    m.n_times = series.size();
    m.fine = series;
    return m;
  };
  SUBCASE("impulse at sample 16 of 160 at 160 Hz") {
    std::vector<double> series(160, 0.0);
    series[16] = 1.0;
    auto windows = temporal_relevance(map_from(series), 0.05, 160.0);
    REQUIRE_FALSE(windows.empty());
    bool covered = false;
    for (auto [s, e] : windows)
      if (s <= 0.1 && 0.1 <= e) covered = true;
    CHECK(covered);
  }
  SUBCASE("uniform relevance with top_fraction 1 is one full window") {
    std::vector<double> series(160, 0.7);
    auto windows = temporal_relevance(map_from(series), 1.0, 160.0);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].first == doctest::Approx(0.0));
    CHECK(windows[0].second == doctest::Approx(1.0));
  }
  SUBCASE("two bumps at 0.1 s and 0.7 s give two windows") {
    std::vector<double> series(160);
    for (std::size_t t = 0; t < 160; ++t) {
      const double ts = static_cast<double>(t) / 160.0;
      series[t] = 0.02 * std::sin(2 * M_PI * 3 * ts) +
                  std::exp(-std::pow((ts - 0.1) / 0.03, 2)) +
                  std::exp(-std::pow((ts - 0.7) / 0.03, 2));
    }
    auto windows = temporal_relevance(map_from(series), 0.12, 160.0);
    REQUIRE(windows.size() == 2);
    CHECK(windows[0].first <= 0.1);
    CHECK(windows[0].second >= 0.1);
    CHECK(windows[1].first <= 0.7);
    CHECK(windows[1].second >= 0.7);
  }
  SUBCASE("argument validation") {
    std::vector<double> series(16, 1.0);
    CHECK_THROWS(temporal_relevance(map_from(series), 0.0, 160.0));
    CHECK_THROWS(temporal_relevance(map_from(series), 1.5, 160.0));
  }
}
