#pragma once

#include <stdexcept>
#include <vector>

#include "dccd/linalg.hpp"

namespace dccd::core {

// Per-sample feature map: C channels over S flattened spatial positions,
// stored as a C x S matrix. This is the object the style transforms act on.
struct FeatureMap {
  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t positions)
      : values(channels, positions) {
    if (channels == 0 || positions == 0)
      throw std::invalid_argument("feature map: channels and positions must be >= 1");
  }
  explicit FeatureMap(linalg::Matrix m) : values(std::move(m)) {
    if (values.rows() == 0 || values.cols() == 0)
      throw std::invalid_argument("feature map: channels and positions must be >= 1");
  }

  std::size_t channels() const { return values.rows(); }
  std::size_t positions() const { return values.cols(); }

  linalg::Matrix values;
};

// arithmetic mean of each channel over positions
std::vector<double> channel_mean(const FeatureMap& f);

}  // namespace dccd::core
