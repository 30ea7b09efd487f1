// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vidlora {

inline constexpr const char* kVersion = "0.1.0";

template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMatRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapMatRM = Eigen::Map<const MatRM<S>>;

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? ", " : "");
  os << ")";
  return os.str();
}

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

#define VL_CHECK(cond, msg)                                     \
  do {                                                          \
    if (!(cond)) ::vidlora::fail(std::string("check failed: ") + (msg)); \
  } while (0)

}  // namespace vidlora
