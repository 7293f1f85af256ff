#pragma once

// Gradient-weighted class activation maps over the hooked temporal-conv
// activation, bilinear upsampling to input resolution, guided backpropagation
// through the ELU gates, and channel/temporal relevance extraction.

#include <string>
#include <utility>
#include <vector>

#include "neurocam/conformer.hpp"
#include "neurocam/ranking.hpp"

namespace neurocam {

struct RelevanceMap {
  ClassLabel class_label{ClassLabel::Left};
  std::size_t n_channels{0};
  std::size_t coarse_times{0};         // T1
  std::vector<double> coarse;          // (n_channels x T1), >= 0
  std::size_t n_times{0};
  std::vector<double> fine;            // (n_channels x n_times), >= 0
  std::vector<double> weights;         // w_k per feature map
  std::size_t z{0};                    // elements per feature map
  EpochProvenance provenance;
};

// The map arithmetic alone: w_k = mean of the gradient over each feature map,
// coarse = ReLU(sum_k w_k A^k). Shared by the model path and oracle tests.
struct GradCamCore {
  std::vector<double> weights;
  std::vector<double> coarse;  // (h x w)
  std::size_t z{0};
};
GradCamCore grad_cam_core(const std::vector<double>& activation,
                          const std::vector<double>& gradient, std::size_t k, std::size_t h,
                          std::size_t w);

// Separable bilinear interpolation with corner alignment.
std::vector<double> upsample_bilinear(const std::vector<double>& src, std::size_t h,
                                      std::size_t w, std::size_t out_h, std::size_t out_w);

RelevanceMap grad_cam(ModelParams& params, const EpochSet& epochs, std::size_t epoch_index,
                      ClassLabel target, const std::string& layer = "temporal_conv_out");

// Gradient of the class logit w.r.t. the input, with ELU/GELU backward gates
// switched to the guided rule for this pass. Returns (n_channels x n_times).
std::vector<double> guided_backprop(ModelParams& params, const EpochSet& epochs,
                                    std::size_t epoch_index, ClassLabel target);

// Elementwise product of the fine map with the guided map.
std::vector<double> guided_gradcam(const std::vector<double>& fine,
                                   const std::vector<double>& guided);

// score(channel) = mean over maps of the time-mean of its fine-map row.
// Callers pass maps of one class (typically correctly predicted epochs only);
// ties resolve by channel_labels order (montage order).
ChannelRanking channel_relevance(const std::vector<RelevanceMap>& maps,
                                 const std::vector<std::string>& channel_labels);

// Maximal runs of the channel-mean relevance at or above the (1-top_fraction)
// quantile, as (start_s, end_s) pairs.
std::vector<std::pair<double, double>> temporal_relevance(const RelevanceMap& map,
                                                          double top_fraction, double fs);

void save_relevance_json(const std::string& path, const RelevanceMap& map,
                         const std::vector<std::string>& channel_labels);

}  // namespace neurocam
