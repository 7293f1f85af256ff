#pragma once

// Two-class synthetic EEG with planted contralateral mu-band
// desynchronization, used as the ground-truth oracle for the full
// train -> explain -> select -> retrain loop.

#include <string>
#include <utility>
#include <vector>

#include "neurocam/channels.hpp"
#include "neurocam/dsp.hpp"
#include "neurocam/tensor.hpp"

namespace neurocam {

struct SynthSpec {
  std::size_t n_trials_per_class{200};
  double fs{160.0};
  std::size_t n_times{160};
  double mu_freq{11.0};
  double erd_depth{0.5};  // oscillation amplitude multiplied by (1 - erd_depth)
  std::vector<std::string> erd_channels_left{"C4", "CP4"};    // contralateral
  std::vector<std::string> erd_channels_right{"C3", "CP3"};
  double mu_amplitude{1.0};
  double noise_sigma{0.3};
  RngState seed{1, 0};
  int subject_id{0};
};

struct SynthGroundTruth {
  std::vector<std::string> left_class_channels;
  std::vector<std::string> right_class_channels;
  double erd_depth{0.0};
  double mu_freq{0.0};
};

// Background is a damped 1/f sinusoid bank plus the mu oscillation on every
// channel; the class's ERD channels carry the attenuated oscillation. Labels
// alternate (balanced); deterministic under the seed, per-trial substreams.
std::pair<EpochSet, SynthGroundTruth> generate_synth(const SynthSpec& spec,
                                                     const MontageLayout& montage);

void save_ground_truth_json(const std::string& path, const SynthGroundTruth& truth);
SynthGroundTruth load_ground_truth_json(const std::string& path);

}  // namespace neurocam
