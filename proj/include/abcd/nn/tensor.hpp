#pragma once

#include <vector>

#include "abcd/core.hpp"

namespace abcd::nn {

/// Dense row-major array of doubles. Sample tensors are channels-last:
/// {length, channels} for sequences and {height, width, channels} for images.
struct Tensor {
  std::vector<Index> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<Index> shape, std::vector<double> data);

  static Tensor zeros(std::vector<Index> shape);
  static Tensor from_vector(const VectorXd& v, std::vector<Index> shape);

  Index size() const { return static_cast<Index>(data.size()); }
  Index rank() const { return static_cast<Index>(shape.size()); }

  Eigen::Map<const VectorXd> flat() const { return {data.data(), size()}; }
  Eigen::Map<VectorXd> flat() { return {data.data(), size()}; }

  bool operator==(const Tensor&) const = default;
};

Index shape_product(const std::vector<Index>& shape);

}  // namespace abcd::nn
