#pragma once

// Signal conditioning for the decoding pipeline: Butterworth band-pass design,
// forward-backward (zero phase) filtering, trial windowing, per-channel
// z-scoring, and Morlet wavelet time-frequency transforms.

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "neurocam/edf.hpp"
#include "neurocam/types.hpp"

namespace neurocam {

struct FilterSpec {
  double low_cut{0.0};
  double high_cut{0.0};
  int order{0};
  double sampling_rate{0.0};
  std::vector<double> b;  // numerator
  std::vector<double> a;  // denominator, a[0] == 1
};

// Stable Butterworth band-pass of the given prototype order (2*order poles).
FilterSpec design_bandpass(double low_hz, double high_hz, double fs, int order);

// H(e^{j 2 pi f / fs}) evaluated directly from the coefficients.
std::complex<double> filter_response(const FilterSpec& spec, double freq_hz);

// Forward-backward application with odd-symmetric reflection padding of
// 3*order samples. Output length equals input length.
std::vector<double> filter_zero_phase(const FilterSpec& spec, const std::vector<double>& signal);

// Applies filter_zero_phase to every channel of a recording.
Recording filter_recording(const FilterSpec& spec, const Recording& rec);

struct EpochProvenance {
  int subject{0};
  int run{0};
  int trial{0};
  int window{0};
};

struct Epoch {
  std::vector<double> data;  // n_channels x n_times
  ClassLabel label{ClassLabel::Left};
  EpochProvenance provenance;
};

// Non-overlapping consecutive windows covering the trial; short remainders are
// dropped (floor semantics).
std::vector<Epoch> epoch_windows(const Trial& trial, const Recording& filtered,
                                 double window_seconds);

struct EpochSet {
  std::vector<double> data;  // n_epochs x n_channels x n_times
  std::size_t n_epochs{0};
  std::size_t n_channels{0};
  std::size_t n_times{0};
  std::vector<ClassLabel> labels;
  std::vector<std::string> channel_labels;
  double sampling_rate{0.0};
  std::vector<EpochProvenance> provenance;

  double at(std::size_t e, std::size_t c, std::size_t t) const {
    return data[(e * n_channels + c) * n_times + t];
  }
  const double* epoch_ptr(std::size_t e) const { return data.data() + e * n_channels * n_times; }
  void append(const Epoch& epoch);
};

EpochSet make_epoch_set(std::vector<std::string> channel_labels, double sampling_rate,
                        std::size_t n_times);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> flat;  // channels whose std was ~0 (divisor replaced by 1)
};

// Per-channel z-score. With no stats given, statistics are computed over all
// epochs and returned; train-set stats can then be applied to a test set.
NormStats zscore_normalize(EpochSet& epochs, const std::optional<NormStats>& stats = std::nullopt);

struct TFR {
  std::vector<double> freqs;
  std::vector<double> times;
  std::vector<double> power;  // n_freqs x n_times, >= 0
  std::string channel;
};

// |conv(signal, L2-normalized complex Morlet)|^2 per frequency. Frequencies
// whose wavelet would exceed the signal length are skipped with a warning.
TFR morlet_tfr(const std::vector<double>& signal, double fs, const std::vector<double>& freqs,
               const std::vector<double>& n_cycles, const std::string& channel = "");

// Container I/O: <base>.bin holds the (E,C,T) array, <base>.json the labels,
// channel names, sampling rate and provenance.
void save_epochs(const std::string& base_path, const EpochSet& epochs);
EpochSet load_epochs(const std::string& base_path);

}  // namespace neurocam
