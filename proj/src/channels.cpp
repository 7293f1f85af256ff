#include "neurocam/channels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "neurocam/util.hpp"

namespace neurocam {

std::size_t MontageLayout::index_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return i;
  throw std::out_of_range("montage has no channel " + label);
}

std::array<double, 2> MontageLayout::project(const std::string& label) const {
  auto it = positions.find(label);
  if (it == positions.end()) throw std::out_of_range("montage has no channel " + label);
  const auto& p = it->second;
  const double z = std::clamp(p[2], -1.0, 1.0);
  const double theta = std::acos(z);
  const double rho = theta / (M_PI / 2.0);
  const double az = std::atan2(p[0], p[1]);  // 0 at nose, positive toward right ear
  return {rho * std::sin(az), rho * std::cos(az)};
}

std::string MontageLayout::normalize_label(const std::string& raw) const {
  std::string stripped = trim_copy(raw);
  while (!stripped.empty() && stripped.back() == '.') stripped.pop_back();
  const std::string key = lower_copy(stripped);
  for (const auto& label : labels)
    if (lower_copy(label) == key) return label;
  throw std::out_of_range("unknown channel label '" + raw + "'");
}

MontageLayout load_montage_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || trim_copy(lines[0]) != "label,x,y,z")
    throw std::runtime_error("montage csv must have header label,x,y,z: " + path);
  MontageLayout m;
  m.name = path;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim_copy(lines[i]).empty()) continue;
    const auto cells = split(lines[i], ',');
    if (cells.size() != 4)
      throw std::runtime_error("montage csv row " + std::to_string(i) + " malformed");
    const std::string label = trim_copy(cells[0]);
    std::array<double, 3> pos{std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
    const double norm = std::sqrt(pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]);
    if (std::abs(norm - 1.0) > 1e-4)
      throw std::runtime_error("montage position for " + label + " is not unit-norm");
    if (m.positions.count(label)) throw std::runtime_error("duplicate montage label " + label);
    m.labels.push_back(label);
    m.positions[label] = pos;
  }
  return m;
}

ChannelSubset top_k_union(const ChannelRanking& left, const ChannelRanking& right,
                          std::size_t k) {
  if (left.order.size() != right.order.size())
    throw std::invalid_argument("top_k_union: rankings cover different label sets");
  for (const auto& label : left.order)
    if (!right.scores.count(label))
      throw std::invalid_argument("top_k_union: label sets differ (" + label + ")");
  if (k > left.order.size()) throw std::invalid_argument("top_k_union: k exceeds channel count");

  std::vector<std::string> members;
  auto take = [&](const ChannelRanking& r) {
    for (std::size_t i = 0; i < k && i < r.order.size(); ++i)
      if (std::find(members.begin(), members.end(), r.order[i]) == members.end())
        members.push_back(r.order[i]);
  };
  take(left);
  take(right);
  std::stable_sort(members.begin(), members.end(), [&](const std::string& a, const std::string& b) {
    const double sa = std::max(left.scores.at(a), right.scores.at(a));
    const double sb = std::max(left.scores.at(b), right.scores.at(b));
    return sa > sb;
  });
  ChannelSubset subset;
  subset.labels = std::move(members);
  subset.origin = "gradcam_union";
  subset.provenance = "top-" + std::to_string(k) + " union of left/right rankings";
  return subset;
}

ChannelSubset mi_channels(const MontageLayout& montage) {
  static const std::vector<std::string> kRows = {
      "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6",  //
      "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",  "C6",   //
      "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6"};
  ChannelSubset subset;
  for (const auto& label : kRows) {
    if (!montage.has(label))
      throw std::invalid_argument("mi_channels: montage is missing " + label);
    subset.labels.push_back(label);
  }
  subset.origin = "domain_mi21";
  subset.provenance = "FC/C/CP rows over the sensorimotor strip";
  return subset;
}

EpochSet subset_epochs(const EpochSet& epochs, const ChannelSubset& subset) {
  if (subset.labels.empty()) throw std::invalid_argument("subset_epochs: empty subset");
  std::vector<std::size_t> rows;
  for (const auto& label : subset.labels) {
    auto it = std::find(epochs.channel_labels.begin(), epochs.channel_labels.end(), label);
    if (it == epochs.channel_labels.end())
      throw std::invalid_argument("subset_epochs: unknown label " + label);
    rows.push_back(static_cast<std::size_t>(it - epochs.channel_labels.begin()));
  }
  EpochSet out;
  out.n_epochs = epochs.n_epochs;
  out.n_channels = rows.size();
  out.n_times = epochs.n_times;
  out.labels = epochs.labels;
  out.channel_labels = subset.labels;
  out.sampling_rate = epochs.sampling_rate;
  out.provenance = epochs.provenance;
  out.data.resize(out.n_epochs * out.n_channels * out.n_times);
  for (std::size_t e = 0; e < out.n_epochs; ++e)
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const double* src = epochs.data.data() + (e * epochs.n_channels + rows[c]) * epochs.n_times;
      double* dst = out.data.data() + (e * out.n_channels + c) * out.n_times;
      std::copy(src, src + out.n_times, dst);
    }
  return out;
}

std::map<std::string, int> aggregate_rankings(const std::vector<ChannelRanking>& per_subject,
                                              std::size_t k) {
  std::map<std::string, int> counts;
  if (per_subject.empty()) return counts;
  for (const auto& label : per_subject.front().order) counts[label] = 0;
  for (const auto& r : per_subject) {
    if (r.order.size() != counts.size())
      throw std::invalid_argument("aggregate_rankings: rankings cover different label sets");
    for (std::size_t i = 0; i < k && i < r.order.size(); ++i) {
      auto it = counts.find(r.order[i]);
      if (it == counts.end())
        throw std::invalid_argument("aggregate_rankings: label sets differ (" + r.order[i] + ")");
      ++it->second;
    }
  }
  return counts;
}

void save_subset_json(const std::string& path, const ChannelSubset& subset) {
  nlohmann::json j;
  j["labels"] = subset.labels;
  j["origin"] = subset.origin;
  j["provenance"] = subset.provenance;
  write_file(path, j.dump(2) + "\n");
}

ChannelSubset load_subset_json(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  ChannelSubset subset;
  subset.labels = j.at("labels").get<std::vector<std::string>>();
  subset.origin = j.at("origin").get<std::string>();
  subset.provenance = j.value("provenance", "");
  return subset;
}

}  // namespace neurocam
