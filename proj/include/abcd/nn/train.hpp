#pragma once

#include <cstdint>
#include <functional>

#include "abcd/nn/network.hpp"

namespace abcd::nn {

/// Column-aligned training data: inputs (F x N) and targets in parameter units (D x N).
struct Dataset {
  MatrixXd inputs;
  MatrixXd targets;

  Index size() const { return inputs.cols(); }
};

struct TrainConfig {
  int epochs = 40;
  Index batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  double temperature = 0.1;
  double weight_regularizer = 1e-6;  // divided by N_train
  double dropout_regularizer = 2.0;  // divided by N_train
  int patience = 8;

  void validate() const;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Adam on the concrete-dropout objective with early stopping on the
/// validation loss; returns the best model seen. Targets are standardized
/// with statistics of the training set only.
TrainedModel train(const NetworkSpec& spec, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Deterministic-mode data loss of a model on a dataset (targets in parameter units).
double evaluate_loss(const TrainedModel& model, const Dataset& data);

/// Adam moments over a ParamSet.
class Adam {
 public:
  Adam(const ParamSet& shape, double lr, double beta1, double beta2, double eps);
  void step(ParamSet& params, const ParamSet& grads);

 private:
  ParamSet m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace abcd::nn
