#pragma once

// EDF/EDF+ reading and writing plus trial extraction for the motor
// movement/imagery recordings. Parsing is pure: malformed input raises
// std::runtime_error with a description, never a partial result.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "neurocam/types.hpp"

namespace neurocam {

struct Annotation {
  double onset_s{0.0};
  double duration_s{0.0};
  std::string label;  // dataset uses T0 / T1 / T2
};

struct Recording {
  int subject_id{0};
  int run_id{0};
  double sampling_rate{0.0};
  std::vector<std::string> channel_labels;
  // row-major n_channels x n_samples, physical units (microvolts)
  std::vector<double> samples;
  std::size_t n_channels{0};
  std::size_t n_samples{0};
  std::vector<Annotation> annotations;  // sorted by onset

  double sample(std::size_t ch, std::size_t t) const { return samples[ch * n_samples + t]; }
  double duration_s() const {
    return sampling_rate > 0 ? static_cast<double>(n_samples) / sampling_rate : 0.0;
  }
};

struct Trial {
  std::size_t onset_sample{0};
  std::size_t length_samples{0};
  ClassLabel label{ClassLabel::Left};
  bool truncated{false};  // annotation extended past the end of data
};

Recording parse_edf(const std::vector<std::uint8_t>& bytes);

// Reads the file and fills subject/run from an SxxxRyy.edf style name when the
// header does not carry them.
Recording load_edf_file(const std::string& path);

// Writes an EDF+ byte stream that parse_edf round-trips: header fields exact,
// samples within one digital quantization step. Annotations are stored in an
// "EDF Annotations" signal when present.
std::vector<std::uint8_t> serialize_edf(const Recording& rec);

// One trial per T1/T2 annotation; T0 rest periods and unknown labels skipped.
std::vector<Trial> extract_trials(const Recording& rec);

struct ValidationIssue {
  std::string code;  // sampling_rate, channel_count, nan_sample, no_annotations
  std::string detail;
};
struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
};

// Checks dataset conformance (160 Hz, 64 channels, finite samples,
// annotations present). Never throws.
ValidationReport validate_recording(const Recording& rec);

}  // namespace neurocam
