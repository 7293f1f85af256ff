#pragma once

#include <map>
#include <string>
#include <vector>

#include "neurocam/types.hpp"

namespace neurocam {

struct ChannelRanking {
  ClassLabel class_label{ClassLabel::Left};
  std::map<std::string, double> scores;
  std::vector<std::string> order;  // descending score, ties broken by montage order
};

}  // namespace neurocam
