#include "abcd/mc_dropout.hpp"

#include "abcd/parallel.hpp"

namespace abcd {

namespace {
const char* kModule = "mc-dropout";
}

std::string to_string(UncertaintyKind kind) { return kind == UncertaintyKind::Epistemic ? "epistemic" : "overall"; }

UncertaintyKind uncertainty_kind_from_string(const std::string& s) {
  if (s == "epistemic") return UncertaintyKind::Epistemic;
  if (s == "overall") return UncertaintyKind::Overall;
  throw Error(kModule, "unknown uncertainty kind '" + s + "'");
}

DropoutPrediction predict_mc(const nn::TrainedModel& model, const nn::Tensor& x, Index passes, std::uint64_t seed) {
  if (x.shape != model.spec.input_shape) throw Error(kModule, "input tensor shape does not match the network");
  const std::uint64_t seeds[1] = {seed};
  return predict_mc_batch(model, x.flat(), passes, seeds).front();
}

std::vector<DropoutPrediction> predict_mc_batch(const nn::TrainedModel& model, const MatrixXd& inputs, Index passes,
                                                std::span<const std::uint64_t> seeds) {
  if (passes < 2) throw Error(kModule, "K must be >= 2 for a defined sample covariance");
  if (!model.spec.has_dropout()) throw Error(kModule, "model has no dropout layers; epistemic variance is undefined");
  if (static_cast<Index>(seeds.size()) != inputs.cols()) throw Error(kModule, "one seed per input column required");
  std::vector<DropoutPrediction> out(static_cast<std::size_t>(inputs.cols()));
  const std::size_t prefix = nn::deterministic_prefix(model.spec);
  parallel_for(out.size(), [&](std::size_t i) {
    const Index col = static_cast<Index>(i);
    // Layers ahead of the first dropout are shared by all passes.
    const MatrixXd shared = nn::forward_prefix(model, inputs.col(col), prefix);
    const MatrixXd replicated = shared.replicate(1, passes);
    std::vector<std::uint64_t> pass_seeds(static_cast<std::size_t>(passes));
    for (Index k = 0; k < passes; ++k) pass_seeds[static_cast<std::size_t>(k)] = pass_seed(seeds[i], k);
    const auto batch = nn::forward_batch_from(model, prefix, replicated, nn::Mode::StochasticDropout, pass_seeds);
    out[i] = decompose_passes<double>(batch.mean, batch.aleatoric);
  });
  return out;
}

UncertaintyMatrix uncertainty_matrix(const DropoutPrediction& pred, UncertaintyKind kind, std::optional<double> ridge) {
  const MatrixXd& base = kind == UncertaintyKind::Epistemic ? pred.epistemic_cov : pred.overall_cov;
  const Index d = base.rows();
  UncertaintyMatrix out;
  out.ridge = ridge.value_or(1e-9 * base.trace() / static_cast<double>(d));
  if (out.ridge < 0.0) throw Error(kModule, "ridge must be >= 0");
  out.degenerate = Eigen::LLT<MatrixXd>(base).info() != Eigen::Success;
  out.matrix = base;
  out.matrix.diagonal().array() += out.ridge;
  if (Eigen::LLT<MatrixXd>(out.matrix).info() != Eigen::Success) {
    throw Error(kModule, "uncertainty matrix is not positive definite even after ridge " + std::to_string(out.ridge) +
                             " (degenerate K or collapsed dropout)");
  }
  return out;
}

}  // namespace abcd
