#include "neurocam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "neurocam/util.hpp"

namespace neurocam {

std::pair<EpochSet, SynthGroundTruth> generate_synth(const SynthSpec& spec,
                                                     const MontageLayout& montage) {
  if (!(spec.erd_depth >= 0.0 && spec.erd_depth <= 1.0))
    throw std::invalid_argument("generate_synth: erd_depth must be in [0,1]");
  for (const auto& lists : {spec.erd_channels_left, spec.erd_channels_right})
    for (const auto& label : lists)
      if (!montage.has(label))
        throw std::invalid_argument("generate_synth: ERD channel not in montage: " + label);

  const std::size_t C = montage.labels.size();
  const std::size_t T = spec.n_times;
  EpochSet set = make_epoch_set(montage.labels, spec.fs, T);

  // 1/f-ish background bank: damped amplitudes across 2..45 Hz
  std::vector<double> bank_freqs;
  for (double f = 2.0; f <= 45.0; f += 1.0) bank_freqs.push_back(f);

  std::vector<bool> erd_left(C, false), erd_right(C, false);
  for (const auto& label : spec.erd_channels_left) erd_left[montage.index_of(label)] = true;
  for (const auto& label : spec.erd_channels_right) erd_right[montage.index_of(label)] = true;

  const std::size_t total = 2 * spec.n_trials_per_class;
  for (std::size_t trial = 0; trial < total; ++trial) {
    const bool left = trial % 2 == 0;
    Epoch ep;
    ep.label = left ? ClassLabel::Left : ClassLabel::Right;
    ep.provenance = {spec.subject_id, 0, static_cast<int>(trial), 0};
    ep.data.assign(C * T, 0.0);
    RngState trial_rng = spec.seed.fork(trial);
    for (std::size_t c = 0; c < C; ++c) {
      RngState rng = trial_rng.fork(c);
      double* row = ep.data.data() + c * T;
      for (double f : bank_freqs) {
        const double amp = spec.noise_sigma * (2.0 / f) * (0.75 + 0.5 * rng.uniform());
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (std::size_t t = 0; t < T; ++t)
          row[t] += amp * std::sin(2.0 * M_PI * f * static_cast<double>(t) / spec.fs + phase);
      }
      double mu_amp = spec.mu_amplitude;
      if ((left && erd_left[c]) || (!left && erd_right[c])) mu_amp *= 1.0 - spec.erd_depth;
      const double mu_phase = rng.uniform(0.0, 2.0 * M_PI);
      for (std::size_t t = 0; t < T; ++t)
        row[t] +=
            mu_amp * std::sin(2.0 * M_PI * spec.mu_freq * static_cast<double>(t) / spec.fs +
                              mu_phase);
    }
    set.append(ep);
  }

  SynthGroundTruth truth;
  truth.left_class_channels = spec.erd_channels_left;
  truth.right_class_channels = spec.erd_channels_right;
  truth.erd_depth = spec.erd_depth;
  truth.mu_freq = spec.mu_freq;
  return {std::move(set), std::move(truth)};
}

void save_ground_truth_json(const std::string& path, const SynthGroundTruth& truth) {
  nlohmann::json j;
  j["left_class_channels"] = truth.left_class_channels;
  j["right_class_channels"] = truth.right_class_channels;
  j["erd_depth"] = truth.erd_depth;
  j["mu_freq"] = truth.mu_freq;
  write_file(path, j.dump(2) + "\n");
}

SynthGroundTruth load_ground_truth_json(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  SynthGroundTruth truth;
  truth.left_class_channels = j.at("left_class_channels").get<std::vector<std::string>>();
  truth.right_class_channels = j.at("right_class_channels").get<std::vector<std::string>>();
  truth.erd_depth = j.at("erd_depth").get<double>();
  truth.mu_freq = j.at("mu_freq").get<double>();
  return truth;
}

}  // namespace neurocam
