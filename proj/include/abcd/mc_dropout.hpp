#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "abcd/core.hpp"
#include "abcd/nn/network.hpp"

namespace abcd {

enum class UncertaintyKind { Epistemic, Overall };

std::string to_string(UncertaintyKind kind);
UncertaintyKind uncertainty_kind_from_string(const std::string& s);

/// Moments of K stochastic forward passes through a dropout network.
template <typename Scalar>
struct BasicDropoutPrediction {
  Vec<Scalar> mean;           // average of the pass means
  Mat<Scalar> epistemic_cov;  // unbiased sample covariance of the pass means
  Vec<Scalar> aleatoric;      // average of the per-pass predicted variances
  Mat<Scalar> overall_cov;    // epistemic_cov + diag(aleatoric)
  Index passes = 0;

  Index dim() const { return mean.size(); }
};

using DropoutPrediction = BasicDropoutPrediction<double>;

/// Reduces per-pass outputs (D x K each) to the mean / covariance decomposition.
template <typename Scalar>
BasicDropoutPrediction<Scalar> decompose_passes(const Mat<Scalar>& pass_means, const Mat<Scalar>& pass_aleatoric) {
  const Index k = pass_means.cols();
  if (k < 2) throw Error("mc-dropout", "at least two passes are needed for a sample covariance");
  if (pass_aleatoric.rows() != pass_means.rows() || pass_aleatoric.cols() != k) {
    throw Error("mc-dropout", "pass mean and variance shapes differ");
  }
  BasicDropoutPrediction<Scalar> out;
  out.passes = k;
  out.mean = pass_means.rowwise().mean();
  const Mat<Scalar> centered = pass_means.colwise() - out.mean;
  const Mat<Scalar> cov = (centered * centered.transpose()) / static_cast<Scalar>(k - 1);
  out.epistemic_cov = cov.template selfadjointView<Eigen::Lower>();
  out.aleatoric = pass_aleatoric.rowwise().mean();
  out.overall_cov = out.epistemic_cov;
  out.overall_cov.diagonal() += out.aleatoric;
  return out;
}

/// Seed of pass k for a record whose MC seed is `seed`.
inline std::uint64_t pass_seed(std::uint64_t seed, Index k) { return derive_seed(seed, static_cast<std::uint64_t>(k)); }

/// K stochastic passes for one input.
DropoutPrediction predict_mc(const nn::TrainedModel& model, const nn::Tensor& x, Index passes, std::uint64_t seed);

/// K stochastic passes for every column of inputs; record i uses seeds[i].
std::vector<DropoutPrediction> predict_mc_batch(const nn::TrainedModel& model, const MatrixXd& inputs, Index passes,
                                                std::span<const std::uint64_t> seeds);

struct UncertaintyMatrix {
  MatrixXd matrix;
  double ridge = 0.0;
  bool degenerate = false;  // the ridge-free matrix was not positive definite
};

/// Heuristic uncertainty V(x) for the conformal score. When ridge is not
/// given it defaults to 1e-9 * trace / D.
UncertaintyMatrix uncertainty_matrix(const DropoutPrediction& pred, UncertaintyKind kind,
                                     std::optional<double> ridge = std::nullopt);

}  // namespace abcd
