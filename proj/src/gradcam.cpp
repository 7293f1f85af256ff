#include "neurocam/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "neurocam/util.hpp"

namespace neurocam {

GradCamCore grad_cam_core(const std::vector<double>& activation,
                          const std::vector<double>& gradient, std::size_t k, std::size_t h,
                          std::size_t w) {
  const std::size_t z = h * w;
  if (activation.size() != k * z || gradient.size() != k * z)
    throw std::invalid_argument("grad_cam_core: activation/gradient size mismatch");
  GradCamCore core;
  core.z = z;
  core.weights.resize(k);
  // w_k = sum over the feature map of dY/dA; on a global-average-pool +
  // linear network this recovers the classifier weight row exactly
  for (std::size_t f = 0; f < k; ++f) {
    double s = 0.0;
    const double* g = gradient.data() + f * z;
    for (std::size_t i = 0; i < z; ++i) s += g[i];
    core.weights[f] = s;
  }
  core.coarse.assign(z, 0.0);
  for (std::size_t f = 0; f < k; ++f) {
    const double wk = core.weights[f];
    const double* a = activation.data() + f * z;
    for (std::size_t i = 0; i < z; ++i) core.coarse[i] += wk * a[i];
  }
  for (double& v : core.coarse) v = std::max(0.0, v);  // ReLU
  return core;
}

std::vector<double> upsample_bilinear(const std::vector<double>& src, std::size_t h,
                                      std::size_t w, std::size_t out_h, std::size_t out_w) {
  if (src.size() != h * w) throw std::invalid_argument("upsample_bilinear: size mismatch");
  if (out_h < h || out_w < w)
    throw std::invalid_argument("upsample_bilinear: target smaller than source");
  std::vector<double> dst(out_h * out_w);
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = static_cast<double>(oy) * sy;
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = static_cast<double>(ox) * sx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const double bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      dst[oy * out_w + ox] = top * (1 - ty) + bot * ty;
    }
  }
  return dst;
}

namespace {

int class_index(ClassLabel c) { return c == ClassLabel::Left ? 0 : 1; }

}  // namespace

RelevanceMap grad_cam(ModelParams& params, const EpochSet& epochs, std::size_t epoch_index,
                      ClassLabel target, const std::string& layer) {
  if (epoch_index >= epochs.n_epochs) throw std::out_of_range("grad_cam: epoch index");
  zero_all_grads(params);
  RngState unused{0, 0};
  ActivationCache cache;
  Tensor input = epochs_to_tensor(epochs, {epoch_index});
  Tensor logits = forward(params, input, false, unused, &cache);
  auto hook = cache.named.find(layer);
  if (hook == cache.named.end()) throw std::invalid_argument("grad_cam: no hook named " + layer);
  Tensor activation = hook->second;

  backward(pick(logits, static_cast<std::size_t>(class_index(target))));

  const auto& shape = activation.shape();  // (1, k, C, T1)
  const std::size_t k = shape[1], C = shape[2], T1 = shape[3];
  GradCamCore core = grad_cam_core(activation.values(), activation.grad(), k, C, T1);
  zero_all_grads(params);

  RelevanceMap map;
  map.class_label = target;
  map.n_channels = C;
  map.coarse_times = T1;
  map.coarse = std::move(core.coarse);
  map.weights = std::move(core.weights);
  map.z = core.z;
  map.n_times = epochs.n_times;
  map.fine = upsample_bilinear(map.coarse, C, T1, C, epochs.n_times);
  map.provenance = epochs.provenance[epoch_index];
  return map;
}

std::vector<double> guided_backprop(ModelParams& params, const EpochSet& epochs,
                                    std::size_t epoch_index, ClassLabel target) {
  if (epoch_index >= epochs.n_epochs) throw std::out_of_range("guided_backprop: epoch index");
  zero_all_grads(params);
  RngState unused{0, 0};
  Tensor input = epochs_to_tensor(epochs, {epoch_index});
  input.set_requires_grad(true);
  Tensor logits = forward(params, input, false, unused);
  {
    GuidedBackwardGuard guard;  // gated nonlinearity rules for this pass only
    backward(pick(logits, static_cast<std::size_t>(class_index(target))));
  }
  std::vector<double> map = input.grad();
  zero_all_grads(params);
  return map;  // (n_channels x n_times)
}

std::vector<double> guided_gradcam(const std::vector<double>& fine,
                                   const std::vector<double>& guided) {
  if (fine.size() != guided.size()) throw std::invalid_argument("guided_gradcam: shape mismatch");
  std::vector<double> out(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) out[i] = fine[i] * guided[i];
  return out;
}

ChannelRanking channel_relevance(const std::vector<RelevanceMap>& maps,
                                 const std::vector<std::string>& channel_labels) {
  if (maps.empty()) throw std::invalid_argument("channel_relevance: no maps");
  const std::size_t C = channel_labels.size();
  for (const auto& m : maps) {
    if (m.n_channels != C)
      throw std::invalid_argument("channel_relevance: map channel count mismatch");
    if (m.class_label != maps.front().class_label)
      throw std::invalid_argument("channel_relevance: maps mix classes");
  }
  ChannelRanking ranking;
  ranking.class_label = maps.front().class_label;
  std::vector<double> score(C, 0.0);
  for (const auto& m : maps) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      const double* row = m.fine.data() + c * m.n_times;
      for (std::size_t t = 0; t < m.n_times; ++t) s += row[t];
      score[c] += s / static_cast<double>(m.n_times);
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    score[c] /= static_cast<double>(maps.size());
    ranking.scores[channel_labels[c]] = score[c];
  }
  std::vector<std::size_t> idx(C);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return score[a] > score[b];  // stable: ties keep montage order
  });
  for (std::size_t i : idx) ranking.order.push_back(channel_labels[i]);
  return ranking;
}

std::vector<std::pair<double, double>> temporal_relevance(const RelevanceMap& map,
                                                          double top_fraction, double fs) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw std::invalid_argument("temporal_relevance: top_fraction in (0,1]");
  const std::size_t T = map.n_times;
  std::vector<double> mean_t(T, 0.0);
  for (std::size_t c = 0; c < map.n_channels; ++c)
    for (std::size_t t = 0; t < T; ++t) mean_t[t] += map.fine[c * T + t];
  for (double& v : mean_t) v /= static_cast<double>(map.n_channels);

  std::vector<double> sorted = mean_t;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t qi = std::min(
      T - 1, static_cast<std::size_t>(std::floor((1.0 - top_fraction) * static_cast<double>(T))));
  const double threshold = sorted[qi];

  std::vector<std::pair<double, double>> windows;
  std::size_t run_start = 0;
  bool in_run = false;
  for (std::size_t t = 0; t <= T; ++t) {
    const bool above = t < T && mean_t[t] >= threshold;
    if (above && !in_run) {
      in_run = true;
      run_start = t;
    } else if (!above && in_run) {
      in_run = false;
      windows.emplace_back(static_cast<double>(run_start) / fs, static_cast<double>(t) / fs);
    }
  }
  return windows;
}

void save_relevance_json(const std::string& path, const RelevanceMap& map,
                         const std::vector<std::string>& channel_labels) {
  nlohmann::json j;
  j["class"] = to_string(map.class_label);
  j["n_channels"] = map.n_channels;
  j["coarse_times"] = map.coarse_times;
  j["n_times"] = map.n_times;
  j["z"] = map.z;
  j["weights"] = map.weights;
  j["channel_labels"] = channel_labels;
  j["provenance"] = {{"subject", map.provenance.subject},
                     {"run", map.provenance.run},
                     {"trial", map.provenance.trial},
                     {"window", map.provenance.window}};
  j["coarse"] = map.coarse;
  j["fine"] = map.fine;
  write_file(path, j.dump() + "\n");
}

}  // namespace neurocam
