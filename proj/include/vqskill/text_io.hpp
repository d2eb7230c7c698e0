#pragma once

// Helpers shared by the line-oriented file formats (datasets, checkpoints,
// plan exports). Floats are always written with 17 significant digits so a
// write/read cycle is bit-exact.

#include <Eigen/Core>

#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace vqskill::text {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void append_array(std::string& out, std::span<const double> values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  out += ']';
}

inline void append_array(std::string& out, const Eigen::VectorXd& v) {
  append_array(out, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

std::string quote(const std::string& s);

}  // namespace vqskill::text
