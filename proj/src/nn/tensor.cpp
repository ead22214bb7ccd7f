#include "abcd/nn/tensor.hpp"

#include <cmath>
#include <string>

namespace abcd::nn {

Index shape_product(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw Error("tensor-nn", "negative tensor extent");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<Index> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape_product(shape) != static_cast<Index>(data.size())) {
    throw Error("tensor-nn", "tensor shape product " + std::to_string(shape_product(shape)) +
                                 " does not match data length " + std::to_string(data.size()));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw Error("tensor-nn", "tensor entries must be finite");
  }
}

Tensor Tensor::zeros(std::vector<Index> shape) {
  const Index n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::from_vector(const VectorXd& v, std::vector<Index> shape) {
  return Tensor(std::move(shape), std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace abcd::nn
