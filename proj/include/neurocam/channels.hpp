#pragma once

// Electrode montage handling and channel-subset construction: Grad-CAM top-k
// unions, the 21 sensorimotor-strip channels, and epoch-set restriction.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "neurocam/dsp.hpp"
#include "neurocam/ranking.hpp"

namespace neurocam {

struct MontageLayout {
  std::string name;
  std::vector<std::string> labels;  // canonical spelling, dataset order
  std::map<std::string, std::array<double, 3>> positions;  // unit sphere, +x right +y nose +z up

  bool has(const std::string& label) const { return positions.count(label) > 0; }
  std::size_t index_of(const std::string& label) const;

  // Azimuthal equidistant projection: radius theta/(pi/2), equator on the
  // unit circle, nose up (+y).
  std::array<double, 2> project(const std::string& label) const;

  // Maps a raw dataset label ("Fc5.", "Cz..") onto the canonical spelling.
  std::string normalize_label(const std::string& raw) const;
};

// CSV with header label,x,y,z (unit-sphere coordinates).
MontageLayout load_montage_csv(const std::string& path);

struct ChannelSubset {
  std::vector<std::string> labels;
  std::string origin;      // gradcam_union | domain_mi21 | manual
  std::string provenance;  // free-form note about the source
};

// Union of both rankings' first k labels, ordered by descending max score.
ChannelSubset top_k_union(const ChannelRanking& left, const ChannelRanking& right, std::size_t k);

// The fixed FC/C/CP rows over the sensorimotor strip.
ChannelSubset mi_channels(const MontageLayout& montage);

// Rows reduced and reordered to the subset; provenance untouched.
EpochSet subset_epochs(const EpochSet& epochs, const ChannelSubset& subset);

// count(ch) = number of rankings whose top-k contains ch.
std::map<std::string, int> aggregate_rankings(const std::vector<ChannelRanking>& per_subject,
                                              std::size_t k);

void save_subset_json(const std::string& path, const ChannelSubset& subset);
ChannelSubset load_subset_json(const std::string& path);

}  // namespace neurocam
