#include "abcd/nn/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace abcd::nn {

namespace {

const char* kModule = "tensor-nn";

constexpr Index kEvalChunk = 512;

MatrixXd gather_columns(const MatrixXd& m, std::span<const Index> idx) {
  MatrixXd out(m.rows(), static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Index>(k)) = m.col(idx[k]);
  return out;
}

double mean_data_loss(const NetworkSpec& spec, const ParamSet& params, const MatrixXd& inputs,
                      const MatrixXd& std_targets) {
  double total = 0.0;
  const Index n = inputs.cols();
  for (Index start = 0; start < n; start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, n - start);
    total += static_cast<double>(len) * loss_value(spec, params, inputs.middleCols(start, len),
                                                   std_targets.middleCols(start, len), Mode::Deterministic, {}, {});
  }
  return total / static_cast<double>(n);
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(kModule, std::string("invalid train config: ") + what);
  };
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(learning_rate >= 0.0, "learning rate must be >= 0");
  require(beta1 > 0.0 && beta1 < 1.0, "beta1 must lie in (0, 1)");
  require(beta2 > 0.0 && beta2 < 1.0, "beta2 must lie in (0, 1)");
  require(epsilon > 0.0, "epsilon must be positive");
  require(temperature > 0.0, "temperature must be positive");
  require(weight_regularizer >= 0.0 && dropout_regularizer >= 0.0, "regularizers must be >= 0");
  require(patience >= 1, "patience must be >= 1");
}

Adam::Adam(const ParamSet& shape, double lr, double beta1, double beta2, double eps)
    : m_(zeros_like(shape)), v_(zeros_like(shape)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamSet& params, const ParamSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double step = lr_ * std::sqrt(c2) / c1;
  const double eps = eps_ * std::sqrt(c2);
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g * g;
    p -= step * m / (v.sqrt() + eps);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].weight.size() > 0) {
      auto pw = params[i].weight.array();
      auto mw = m_[i].weight.array();
      auto vw = v_[i].weight.array();
      update(pw, mw, vw, grads[i].weight.array());
      auto pb = params[i].bias.array();
      auto mb = m_[i].bias.array();
      auto vb = v_[i].bias.array();
      update(pb, mb, vb, grads[i].bias.array());
    }
    const double g = grads[i].dropout_logit;
    double& m = m_[i].dropout_logit;
    double& v = v_[i].dropout_logit;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g * g;
    params[i].dropout_logit -= step * m / (std::sqrt(v) + eps);
  }
}

TrainedModel train(const NetworkSpec& spec_in, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw Error(kModule, "training set is empty");
  if (val_set.size() == 0) throw Error(kModule, "validation set is empty");
  NetworkSpec spec = spec_in;
  spec.dropout_temperature = cfg.temperature;
  for (const Dataset* d : {&train_set, &val_set}) {
    if (d->inputs.rows() != spec.input_size()) throw Error(kModule, "dataset inputs do not match the network input");
    if (d->targets.rows() != spec.output_dim || d->targets.cols() != d->inputs.cols())
      throw Error(kModule, "dataset targets do not match the network output");
  }

  TrainedModel model = make_model(spec, derive_seed(cfg.seed, "init"));
  model.record.seed = cfg.seed;
  model.standardization = Standardization::fit(train_set.targets);
  const MatrixXd train_targets = model.standardization.apply_columns(train_set.targets);
  const MatrixXd val_targets = model.standardization.apply_columns(val_set.targets);

  const double n_train = static_cast<double>(train_set.size());
  const RegularizerWeights reg{cfg.weight_regularizer / n_train, cfg.dropout_regularizer / n_train};

  Adam adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  ParamSet best = model.params;
  double best_val = mean_data_loss(spec, model.params, val_set.inputs, val_targets);
  int best_epoch = 0;
  double best_train = mean_data_loss(spec, model.params, train_set.inputs, train_targets);
  int since_best = 0;

  std::vector<Index> order(static_cast<std::size_t>(train_set.size()));
  std::vector<std::uint64_t> seeds;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t noise_seed = derive_seed(cfg.seed, "noise");
  std::uint64_t step = 0;
  int epoch = 0;
  for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t k = order.size(); k > 1; --k) {
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      std::swap(order[k - 1], order[pick(rng)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::span<const Index> idx(order.data() + start, len);
      const MatrixXd xb = gather_columns(train_set.inputs, idx);
      const MatrixXd yb = gather_columns(train_targets, idx);
      const std::uint64_t step_seed = derive_seed(noise_seed, step++);
      seeds.resize(len);
      for (std::size_t b = 0; b < len; ++b) seeds[b] = derive_seed(step_seed, b);
      LossAndGrad lg;
      try {
        lg = loss_and_grad(spec, model.params, xb, yb, Mode::StochasticDropout, seeds, reg);
      } catch (const Error& e) {
        throw Error(kModule, "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      epoch_loss += lg.loss * static_cast<double>(len);
      adam.step(model.params, lg.grads);
    }
    epoch_loss /= n_train;
    double val = mean_data_loss(spec, model.params, val_set.inputs, val_targets);
    if (!std::isfinite(val) || !std::isfinite(epoch_loss)) {
      throw Error(kModule, "training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
    }
    if (on_epoch) on_epoch(epoch, epoch_loss, val);
    if (val < best_val) {
      best_val = val;
      best = model.params;
      best_epoch = epoch;
      best_train = epoch_loss;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params = std::move(best);
  model.record.epochs_run = std::min(epoch, cfg.epochs);
  model.record.best_epoch = best_epoch;
  model.record.train_loss = best_train;
  model.record.val_loss = best_val;
  return model;
}

double evaluate_loss(const TrainedModel& model, const Dataset& data) {
  return mean_data_loss(model.spec, model.params, data.inputs, model.standardization.apply_columns(data.targets));
}

}  // namespace abcd::nn
