#pragma once

// The fixed convolution+self-attention classifier: temporal convolution over
// each electrode, depthwise spatial collapse across electrodes, batch norm,
// ELU, average pooling into tokens, transformer encoder blocks, and a
// two-layer head. The temporal-conv activation (electrode axis intact) is
// exposed through the cache for gradient-based explanation.

#include <map>
#include <string>
#include <vector>

#include "neurocam/dsp.hpp"
#include "neurocam/tensor.hpp"

namespace neurocam {

struct ConformerConfig {
  std::size_t n_channels{64};
  std::size_t n_times{160};
  std::size_t n_feature_maps{40};  // embedding dim of the encoder
  std::size_t temporal_kernel{25};
  std::size_t pool_len{75};
  std::size_t pool_stride{15};
  std::size_t encoder_depth{2};
  std::size_t heads{4};
  std::size_t mlp_expansion{4};
  std::size_t classifier_hidden{32};
  double dropout_p{0.5};
  std::size_t n_classes{2};

  std::size_t conv_out_times() const { return n_times - temporal_kernel + 1; }
  std::size_t token_count() const { return (conv_out_times() - pool_len) / pool_stride + 1; }
  void validate() const;
};

struct ModelParams {
  ConformerConfig config;
  std::map<std::string, Tensor> tensors;
  BatchNormState bn_state;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
};

// Kaiming-style uniform initialization, deterministic under the seed.
ModelParams build(const ConformerConfig& config, RngState seed);

struct ActivationCache {
  std::map<std::string, Tensor> named;
  Tensor logits;
};

// batch shape (N, 1, n_channels, n_times)
Tensor forward(ModelParams& params, const Tensor& batch, bool training, RngState& dropout_rng,
               ActivationCache* cache = nullptr);

Tensor epochs_to_tensor(const EpochSet& epochs, const std::vector<std::size_t>& indices);

struct Prediction {
  std::vector<ClassLabel> labels;
  std::vector<std::array<double, 2>> scores;  // pre-softmax logits [Left, Right]
};

// Eval-mode argmax over class logits; ties resolve to the lower class index.
Prediction predict(ModelParams& params, const EpochSet& epochs, std::size_t batch_size = 64);

void zero_all_grads(ModelParams& params);

// <base>.bin parameter store plus <base>.meta.json (config + batch-norm state).
void save_checkpoint(const std::string& base_path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& base_path);

}  // namespace neurocam
