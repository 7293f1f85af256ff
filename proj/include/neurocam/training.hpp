#pragma once

// Per-subject supervised training: trial-grouped stratified splitting, Adam
// optimization of the cross-entropy, and accuracy evaluation.

#include <utility>
#include <vector>

#include "neurocam/conformer.hpp"
#include "neurocam/dsp.hpp"
#include "neurocam/stats.hpp"

namespace neurocam {

struct Hyperparams {
  double learning_rate{2e-4};
  double beta1{0.5};
  double beta2{0.999};
  double adam_eps{1e-8};
  std::size_t batch_size{32};
  std::size_t epochs{150};
  double weight_decay{0.0};
  RngState seed{7, 0};
};

// Stratified by class and grouped on (subject, run, trial) provenance so all
// windows of one trial land on the same side. Deterministic under the seed.
std::pair<EpochSet, EpochSet> split_dataset(const EpochSet& epochs, double test_fraction,
                                            RngState seed);

struct TrainHistory {
  std::vector<double> loss;       // per epoch
  std::vector<double> train_acc;  // per epoch, percent
  bool aborted_nan{false};        // stopped early, parameters restored to last good epoch
};

TrainHistory train(ModelParams& params, const EpochSet& train_set, const Hyperparams& hp);

// Count-ratio accuracies in percent; chance level supplied by the caller.
SubjectMetrics evaluate(ModelParams& params, const EpochSet& test_set, double chance_level_pct);

SubjectMetrics metrics_from_predictions(const std::vector<ClassLabel>& predicted,
                                        const std::vector<ClassLabel>& truth,
                                        double chance_level_pct, int subject_id = 0);

}  // namespace neurocam
