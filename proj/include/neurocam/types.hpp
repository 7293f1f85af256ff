#pragma once

#include <stdexcept>
#include <string>

namespace neurocam {

enum class ClassLabel { Left, Right };

inline const char* to_string(ClassLabel c) { return c == ClassLabel::Left ? "Left" : "Right"; }

inline ClassLabel class_from_string(const std::string& s) {
  if (s == "Left") return ClassLabel::Left;
  if (s == "Right") return ClassLabel::Right;
  throw std::invalid_argument("unknown class label: " + s);
}

}  // namespace neurocam
