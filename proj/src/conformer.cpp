#include "neurocam/conformer.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "neurocam/param_store.hpp"
#include "neurocam/util.hpp"

namespace neurocam {

void ConformerConfig::validate() const {
  if (n_channels == 0 || n_times == 0 || n_feature_maps == 0 || n_classes < 2)
    throw std::invalid_argument("conformer config: zero-sized dimension");
  if (n_times < temporal_kernel)
    throw std::invalid_argument("conformer config: n_times shorter than the temporal kernel");
  if (conv_out_times() < pool_len)
    throw std::invalid_argument("conformer config: pooling window exceeds conv output");
  if (token_count() < 1) throw std::invalid_argument("conformer config: no tokens after pooling");
  if (heads == 0 || n_feature_maps % heads != 0)
    throw std::invalid_argument("conformer config: embedding dim not divisible by heads");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw std::invalid_argument("conformer config: dropout_p must be in [0,1)");
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("model has no parameter " + name);
  return it->second;
}
const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("model has no parameter " + name);
  return it->second;
}

namespace {

Tensor init_uniform(std::vector<std::size_t> shape, std::size_t fan_in, RngState& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace

ModelParams build(const ConformerConfig& config, RngState seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  auto& t = params.tensors;
  RngState rng = seed;

  const std::size_t k = config.n_feature_maps;
  const std::size_t D = k;
  const std::size_t mlp = D * config.mlp_expansion;

  t["conv_temporal.weight"] = init_uniform({k, 1, 1, config.temporal_kernel},
                                           config.temporal_kernel, rng);
  t["conv_temporal.bias"] = Tensor::zeros({k}, true);
  t["conv_spatial.weight"] = init_uniform({k, 1, config.n_channels, 1}, config.n_channels, rng);
  t["conv_spatial.bias"] = Tensor::zeros({k}, true);
  t["bn.gamma"] = Tensor::full({k}, 1.0, true);
  t["bn.beta"] = Tensor::zeros({k}, true);

  for (std::size_t b = 0; b < config.encoder_depth; ++b) {
    const std::string p = "enc" + std::to_string(b) + ".";
    t[p + "ln1.gamma"] = Tensor::full({D}, 1.0, true);
    t[p + "ln1.beta"] = Tensor::zeros({D}, true);
    for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      t[p + name] = init_uniform({D, D}, D, rng);
    for (const char* name : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      t[p + name] = Tensor::zeros({D}, true);
    t[p + "ln2.gamma"] = Tensor::full({D}, 1.0, true);
    t[p + "ln2.beta"] = Tensor::zeros({D}, true);
    t[p + "mlp.w1"] = init_uniform({D, mlp}, D, rng);
    t[p + "mlp.b1"] = Tensor::zeros({mlp}, true);
    t[p + "mlp.w2"] = init_uniform({mlp, D}, mlp, rng);
    t[p + "mlp.b2"] = Tensor::zeros({D}, true);
  }

  const std::size_t flat = config.token_count() * k;
  t["head.w1"] = init_uniform({flat, config.classifier_hidden}, flat, rng);
  t["head.b1"] = Tensor::zeros({config.classifier_hidden}, true);
  t["head.w2"] = init_uniform({config.classifier_hidden, config.n_classes},
                              config.classifier_hidden, rng);
  t["head.b2"] = Tensor::zeros({config.n_classes}, true);

  params.bn_state.running_mean.assign(k, 0.0);
  params.bn_state.running_var.assign(k, 1.0);
  return params;
}

Tensor forward(ModelParams& params, const Tensor& batch, bool training, RngState& dropout_rng,
               ActivationCache* cache) {
  const auto& cfg = params.config;
  if (batch.ndim() != 4 || batch.dim(1) != 1 || batch.dim(2) != cfg.n_channels ||
      batch.dim(3) != cfg.n_times)
    throw std::invalid_argument("forward: batch shape does not match the model config");
  const std::size_t N = batch.dim(0);
  const std::size_t k = cfg.n_feature_maps;
  const std::size_t Tp = cfg.token_count();

  Tensor h = add_channel_bias(conv2d_valid(batch, params.at("conv_temporal.weight")),
                              params.at("conv_temporal.bias"));
  if (cache) cache->named["temporal_conv_out"] = h;  // (N,k,C,T1), electrode axis intact

  h = add_channel_bias(conv2d_valid(h, params.at("conv_spatial.weight"), 1, 1, k),
                       params.at("conv_spatial.bias"));  // (N,k,1,T1)
  h = batch_norm2d(h, params.at("bn.gamma"), params.at("bn.beta"), params.bn_state, training);
  h = elu(h);
  h = avg_pool2d(h, 1, cfg.pool_len, 1, cfg.pool_stride);  // (N,k,1,T')
  h = dropout(h, cfg.dropout_p, dropout_rng, training);

  Tensor tokens = transpose(reshape(h, {N, k, Tp}), {0, 2, 1});  // (N,T',k)
  for (std::size_t b = 0; b < cfg.encoder_depth; ++b) {
    const std::string p = "enc" + std::to_string(b) + ".";
    AttentionParams ap{params.at(p + "attn.wq"), params.at(p + "attn.bq"),
                       params.at(p + "attn.wk"), params.at(p + "attn.bk"),
                       params.at(p + "attn.wv"), params.at(p + "attn.bv"),
                       params.at(p + "attn.wo"), params.at(p + "attn.bo")};
    Tensor a = layer_norm(tokens, params.at(p + "ln1.gamma"), params.at(p + "ln1.beta"));
    a = multihead_attention(a, cfg.heads, ap);
    a = dropout(a, cfg.dropout_p, dropout_rng, training);
    tokens = add(tokens, a);

    Tensor m = layer_norm(tokens, params.at(p + "ln2.gamma"), params.at(p + "ln2.beta"));
    Tensor m2 = reshape(m, {N * Tp, k});
    m2 = gelu(add_bias(matmul(m2, params.at(p + "mlp.w1")), params.at(p + "mlp.b1")));
    m2 = dropout(m2, cfg.dropout_p, dropout_rng, training);
    m2 = add_bias(matmul(m2, params.at(p + "mlp.w2")), params.at(p + "mlp.b2"));
    tokens = add(tokens, reshape(m2, {N, Tp, k}));
  }
  if (cache) cache->named["tokens"] = tokens;

  Tensor flat = reshape(tokens, {N, Tp * k});
  Tensor h1 = elu(add_bias(matmul(flat, params.at("head.w1")), params.at("head.b1")));
  h1 = dropout(h1, cfg.dropout_p, dropout_rng, training);
  Tensor logits = add_bias(matmul(h1, params.at("head.w2")), params.at("head.b2"));

  for (double v : logits.values())
    if (!std::isfinite(v)) throw std::runtime_error("forward: non-finite logits");
  if (cache) cache->logits = logits;
  return logits;
}

Tensor epochs_to_tensor(const EpochSet& epochs, const std::vector<std::size_t>& indices) {
  const std::size_t C = epochs.n_channels, T = epochs.n_times;
  std::vector<double> values;
  values.reserve(indices.size() * C * T);
  for (std::size_t e : indices) {
    const double* src = epochs.epoch_ptr(e);
    values.insert(values.end(), src, src + C * T);
  }
  return Tensor::from_values({indices.size(), 1, C, T}, std::move(values));
}

Prediction predict(ModelParams& params, const EpochSet& epochs, std::size_t batch_size) {
  Prediction out;
  RngState unused{0, 0};
  for (std::size_t start = 0; start < epochs.n_epochs; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t e = start; e < std::min(epochs.n_epochs, start + batch_size); ++e)
      idx.push_back(e);
    Tensor logits = forward(params, epochs_to_tensor(epochs, idx), false, unused);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double left = logits.values()[r * 2];
      const double right = logits.values()[r * 2 + 1];
      out.scores.push_back({left, right});
      out.labels.push_back(right > left ? ClassLabel::Right : ClassLabel::Left);
    }
  }
  return out;
}

void zero_all_grads(ModelParams& params) {
  for (auto& [name, tensor] : params.tensors) tensor.zero_grad();
}

void save_checkpoint(const std::string& base_path, const ModelParams& params) {
  save_params(base_path + ".bin", params.tensors);
  nlohmann::json meta;
  meta["config"] = {{"n_channels", params.config.n_channels},
                    {"n_times", params.config.n_times},
                    {"n_feature_maps", params.config.n_feature_maps},
                    {"temporal_kernel", params.config.temporal_kernel},
                    {"pool_len", params.config.pool_len},
                    {"pool_stride", params.config.pool_stride},
                    {"encoder_depth", params.config.encoder_depth},
                    {"heads", params.config.heads},
                    {"mlp_expansion", params.config.mlp_expansion},
                    {"classifier_hidden", params.config.classifier_hidden},
                    {"dropout_p", params.config.dropout_p},
                    {"n_classes", params.config.n_classes}};
  meta["bn"] = {{"running_mean", params.bn_state.running_mean},
                {"running_var", params.bn_state.running_var},
                {"momentum", params.bn_state.momentum},
                {"eps", params.bn_state.eps}};
  write_file(base_path + ".meta.json", meta.dump(2) + "\n");
}

ModelParams load_checkpoint(const std::string& base_path) {
  nlohmann::json meta = nlohmann::json::parse(read_file(base_path + ".meta.json"));
  ModelParams params;
  const auto& c = meta.at("config");
  params.config.n_channels = c.at("n_channels").get<std::size_t>();
  params.config.n_times = c.at("n_times").get<std::size_t>();
  params.config.n_feature_maps = c.at("n_feature_maps").get<std::size_t>();
  params.config.temporal_kernel = c.at("temporal_kernel").get<std::size_t>();
  params.config.pool_len = c.at("pool_len").get<std::size_t>();
  params.config.pool_stride = c.at("pool_stride").get<std::size_t>();
  params.config.encoder_depth = c.at("encoder_depth").get<std::size_t>();
  params.config.heads = c.at("heads").get<std::size_t>();
  params.config.mlp_expansion = c.at("mlp_expansion").get<std::size_t>();
  params.config.classifier_hidden = c.at("classifier_hidden").get<std::size_t>();
  params.config.dropout_p = c.at("dropout_p").get<double>();
  params.config.n_classes = c.at("n_classes").get<std::size_t>();
  params.tensors = load_params(base_path + ".bin");
  for (auto& [name, tensor] : params.tensors) tensor.set_requires_grad(true);
  params.bn_state.running_mean = meta.at("bn").at("running_mean").get<std::vector<double>>();
  params.bn_state.running_var = meta.at("bn").at("running_var").get<std::vector<double>>();
  params.bn_state.momentum = meta.at("bn").at("momentum").get<double>();
  params.bn_state.eps = meta.at("bn").at("eps").get<double>();
  return params;
}

}  // namespace neurocam
