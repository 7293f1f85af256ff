#include "neurocam/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace neurocam {

namespace {

using GroupKey = std::tuple<int, int, int>;  // subject, run, trial

EpochSet gather(const EpochSet& src, const std::vector<std::size_t>& indices) {
  EpochSet out = make_epoch_set(src.channel_labels, src.sampling_rate, src.n_times);
  for (std::size_t e : indices) {
    Epoch ep;
    ep.label = src.labels[e];
    ep.provenance = src.provenance[e];
    const double* p = src.epoch_ptr(e);
    ep.data.assign(p, p + src.n_channels * src.n_times);
    out.append(ep);
  }
  return out;
}

struct AdamSlot {
  std::vector<double> m, v;
};

}  // namespace

std::pair<EpochSet, EpochSet> split_dataset(const EpochSet& epochs, double test_fraction,
                                            RngState seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split_dataset: test_fraction must be in (0,1)");
  if (epochs.n_epochs == 0) throw std::invalid_argument("split_dataset: empty epoch set");

  // group epochs by trial provenance; a group's class is its trial's class
  std::map<GroupKey, std::vector<std::size_t>> groups;
  std::map<GroupKey, ClassLabel> group_class;
  for (std::size_t e = 0; e < epochs.n_epochs; ++e) {
    const auto& p = epochs.provenance[e];
    GroupKey key{p.subject, p.run, p.trial};
    groups[key].push_back(e);
    auto it = group_class.find(key);
    if (it == group_class.end())
      group_class[key] = epochs.labels[e];
    else if (it->second != epochs.labels[e])
      throw std::invalid_argument("split_dataset: mixed class labels inside one trial group");
  }

  std::vector<GroupKey> left_groups, right_groups;
  for (const auto& [key, cls] : group_class)
    (cls == ClassLabel::Left ? left_groups : right_groups).push_back(key);
  if (left_groups.empty() || right_groups.empty())
    throw std::invalid_argument("split_dataset: a class is absent from the input");

  RngState rng = seed;
  std::vector<std::size_t> test_epochs, train_epochs;
  auto assign = [&](std::vector<GroupKey>& keys) {
    // deterministic Fisher-Yates
    for (std::size_t i = keys.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(keys[i - 1], keys[j]);
    }
    if (keys.size() < 2)
      throw std::invalid_argument(
          "split_dataset: cannot stratify a class with fewer than 2 trial groups");
    std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(keys.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, keys.size() - 1);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto& members = groups.at(keys[i]);
      auto& dst = i < n_test ? test_epochs : train_epochs;
      dst.insert(dst.end(), members.begin(), members.end());
    }
  };
  assign(left_groups);
  assign(right_groups);
  std::sort(test_epochs.begin(), test_epochs.end());
  std::sort(train_epochs.begin(), train_epochs.end());
  return {gather(epochs, train_epochs), gather(epochs, test_epochs)};
}

TrainHistory train(ModelParams& params, const EpochSet& train_set, const Hyperparams& hp) {
  if (train_set.n_epochs == 0) throw std::invalid_argument("train: empty training set");
  if (hp.batch_size == 0 || hp.batch_size > train_set.n_epochs)
    throw std::invalid_argument("train: batch_size must be in [1, n_train]");

  TrainHistory history;
  RngState shuffle_rng = hp.seed.fork(1);
  RngState dropout_rng = hp.seed.fork(2);

  std::map<std::string, AdamSlot> adam;
  for (auto& [name, t] : params.tensors)
    adam[name] = AdamSlot{std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)};
  std::size_t step = 0;

  // snapshot for NaN recovery
  auto snapshot = [&]() {
    std::map<std::string, std::vector<double>> snap;
    for (auto& [name, t] : params.tensors) snap[name] = t.values();
    return snap;
  };
  auto last_good = snapshot();
  auto last_good_bn = params.bn_state;

  std::vector<std::size_t> order(train_set.n_epochs);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next_u64() % i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batches = 0;
    bool nan_hit = false;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       order.size(), start + hp.batch_size)));
      std::vector<int> targets;
      for (std::size_t e : idx) targets.push_back(train_set.labels[e] == ClassLabel::Left ? 0 : 1);

      zero_all_grads(params);
      Tensor logits = forward(params, epochs_to_tensor(train_set, idx), true, dropout_rng);
      Tensor loss = cross_entropy_with_logits(logits, targets);
      if (!std::isfinite(loss.item())) {
        nan_hit = true;
        break;
      }
      backward(loss);

      ++step;
      const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
      for (auto& [name, t] : params.tensors) {
        auto& slot = adam.at(name);
        auto& val = t.values();
        const auto& g = t.grad();
        for (std::size_t i = 0; i < val.size(); ++i) {
          const double gi = g[i] + hp.weight_decay * val[i];
          slot.m[i] = hp.beta1 * slot.m[i] + (1.0 - hp.beta1) * gi;
          slot.v[i] = hp.beta2 * slot.v[i] + (1.0 - hp.beta2) * gi * gi;
          const double mhat = slot.m[i] / bc1;
          const double vhat = slot.v[i] / bc2;
          val[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + hp.adam_eps);
        }
      }

      loss_sum += loss.item();
      ++batches;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const double left = logits.values()[r * 2], right = logits.values()[r * 2 + 1];
        const ClassLabel pred = right > left ? ClassLabel::Right : ClassLabel::Left;
        if (pred == train_set.labels[idx[r]]) ++correct;
        ++seen;
      }
    }
    if (nan_hit) {
      for (auto& [name, t] : params.tensors) t.values() = last_good.at(name);
      params.bn_state = last_good_bn;
      history.aborted_nan = true;
      break;
    }
    history.loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
    history.train_acc.push_back(100.0 * static_cast<double>(correct) /
                                static_cast<double>(std::max<std::size_t>(seen, 1)));
    last_good = snapshot();
    last_good_bn = params.bn_state;
  }
  zero_all_grads(params);
  return history;
}

SubjectMetrics evaluate(ModelParams& params, const EpochSet& test_set, double chance_level_pct) {
  if (test_set.n_epochs == 0) throw std::invalid_argument("evaluate: empty test set");
  Prediction pred = predict(params, test_set);
  const int subject = test_set.provenance.empty() ? 0 : test_set.provenance.front().subject;
  return metrics_from_predictions(pred.labels, test_set.labels, chance_level_pct, subject);
}

SubjectMetrics metrics_from_predictions(const std::vector<ClassLabel>& predicted,
                                        const std::vector<ClassLabel>& truth,
                                        double chance_level_pct, int subject_id) {
  if (predicted.size() != truth.size() || truth.empty())
    throw std::invalid_argument("metrics_from_predictions: prediction/truth size mismatch");
  SubjectMetrics m;
  m.subject_id = subject_id;
  m.chance_level = chance_level_pct;
  int correct_left = 0, correct_right = 0;
  for (std::size_t e = 0; e < truth.size(); ++e) {
    const bool is_left = truth[e] == ClassLabel::Left;
    if (is_left)
      ++m.n_test_left;
    else
      ++m.n_test_right;
    if (predicted[e] == truth[e]) (is_left ? correct_left : correct_right) += 1;
  }
  m.n_test = m.n_test_left + m.n_test_right;
  m.left_acc = m.n_test_left ? 100.0 * correct_left / m.n_test_left : 0.0;
  m.right_acc = m.n_test_right ? 100.0 * correct_right / m.n_test_right : 0.0;
  m.overall_acc = 100.0 * (correct_left + correct_right) / m.n_test;
  return m;
}

}  // namespace neurocam
