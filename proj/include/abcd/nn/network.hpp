#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abcd/core.hpp"
#include "abcd/nn/tensor.hpp"

namespace abcd::nn {

enum class LayerKind { Dense, Conv1D, Conv2D, MaxPool, Flatten, ConcreteDropout, Activation };
enum class Activation { Linear, Relu, Tanh };
enum class HeadKind { PointOnly, Heteroscedastic };
enum class Mode { Deterministic, StochasticDropout };

std::string to_string(LayerKind kind);
std::string to_string(Activation act);
std::string to_string(HeadKind head);
LayerKind layer_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);
HeadKind head_kind_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  Index units = 0;     // Dense
  Index channels = 0;  // Conv output channels
  Index kernel = 0;    // Conv kernel extent (square for Conv2D)
  Index pool = 2;      // MaxPool window
  Activation activation = Activation::Linear;
  double initial_dropout = 0.1;

  static LayerSpec dense(Index units, Activation act);
  static LayerSpec conv1d(Index channels, Index kernel, Activation act);
  static LayerSpec conv2d(Index channels, Index kernel, Activation act);
  static LayerSpec max_pool(Index window = 2);
  static LayerSpec flatten();
  static LayerSpec concrete_dropout(double initial_p = 0.1);
  static LayerSpec activation_layer(Activation act);

  bool operator==(const LayerSpec&) const = default;
};

/// Layer stack followed by an implicit linear head. The head emits D means
/// (PointOnly) or D means then D log-variances (Heteroscedastic).
struct NetworkSpec {
  std::vector<Index> input_shape;
  std::vector<LayerSpec> layers;
  Index output_dim = 1;
  HeadKind head = HeadKind::Heteroscedastic;
  double dropout_temperature = 0.1;

  Index head_width() const { return head == HeadKind::Heteroscedastic ? 2 * output_dim : output_dim; }
  Index input_size() const { return shape_product(input_shape); }
  bool has_dropout() const;

  bool operator==(const NetworkSpec&) const = default;
};

/// Per-sample activation geometry, channels-last. Sequences use h = 1.
struct Geometry {
  Index h = 1, w = 1, c = 1;
  int rank = 1;
  Index size() const { return h * w * c; }
};

/// Shapes of every layer input plus the head input; throws on inconsistency.
std::vector<Geometry> plan_geometry(const NetworkSpec& spec);

/// Weights for one layer. Dense/head weight is (out x in); convolution weight
/// is (out_channels x kh*kw*in_channels) with input channel fastest.
struct LayerParams {
  MatrixXd weight;
  VectorXd bias;
  double dropout_logit = 0.0;  // ConcreteDropout only

  bool operator==(const LayerParams&) const = default;
};

/// Indexed like spec.layers, with the head appended at the end.
using ParamSet = std::vector<LayerParams>;

ParamSet zeros_like(const ParamSet& params);
/// He-uniform for relu layers, Glorot-uniform otherwise.
ParamSet initialize(const NetworkSpec& spec, std::uint64_t seed);

/// Per-dimension affine map applied to targets before training.
struct Standardization {
  VectorXd shift;
  VectorXd scale;

  static Standardization identity(Index dim);
  static Standardization fit(const MatrixXd& thetas);  // D x N

  VectorXd apply(const VectorXd& theta) const { return (theta - shift).cwiseQuotient(scale); }
  VectorXd invert(const VectorXd& z) const { return z.cwiseProduct(scale) + shift; }
  MatrixXd apply_columns(const MatrixXd& thetas) const;

  bool operator==(const Standardization&) const = default;
};

struct TrainingRecord {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  bool operator==(const TrainingRecord&) const = default;
};

struct TrainedModel {
  NetworkSpec spec;
  ParamSet params;
  Standardization standardization;
  TrainingRecord record;

  /// Learned dropout probabilities, one per ConcreteDropout layer.
  std::vector<double> dropout_probabilities() const;

  bool operator==(const TrainedModel&) const = default;
};

/// Builds an untrained model; throws if the spec does not chain.
TrainedModel make_model(const NetworkSpec& spec, std::uint64_t seed);

struct Prediction {
  VectorXd mean;
  VectorXd aleatoric;  // per-dimension variance, always > 0
};

struct BatchPrediction {
  MatrixXd mean;       // D x B
  MatrixXd aleatoric;  // D x B
};

/// Single-sample forward pass in parameter units.
Prediction forward(const TrainedModel& model, const Tensor& x, Mode mode, std::uint64_t noise_seed = 0);

/// Column-batched forward pass. In StochasticDropout mode column b draws its
/// masks from column_seeds[b]; a column's result does not depend on the rest
/// of the batch.
BatchPrediction forward_batch(const TrainedModel& model, const MatrixXd& inputs, Mode mode,
                              std::span<const std::uint64_t> column_seeds = {});

/// Number of leading layers before the first ConcreteDropout layer; their
/// output is the same in both modes.
std::size_t deterministic_prefix(const NetworkSpec& spec);

/// Activations after the first n_layers layers (columns are samples).
MatrixXd forward_prefix(const TrainedModel& model, const MatrixXd& inputs, std::size_t n_layers);

/// Finishes a forward pass from the input of layer first_layer. Noise streams
/// are keyed by absolute layer index, so splitting a pass this way gives the
/// same masks as forward_batch.
BatchPrediction forward_batch_from(const TrainedModel& model, std::size_t first_layer, const MatrixXd& activations,
                                   Mode mode, std::span<const std::uint64_t> column_seeds = {});

struct RegularizerWeights {
  double weight = 0.0;   // coefficient on |W|^2 / (1 - p)
  double dropout = 0.0;  // coefficient on input_dim * negative entropy of p
};

struct LossAndGrad {
  double loss = 0.0;
  double data_loss = 0.0;
  ParamSet grads;
};

/// Gaussian negative log-likelihood (without the constant), summed over
/// dimensions and averaged over the batch, plus the concrete-dropout
/// regularizer. targets are standardized, inputs are columns.
LossAndGrad loss_and_grad(const NetworkSpec& spec, const ParamSet& params, const MatrixXd& inputs,
                          const MatrixXd& targets, Mode mode, std::span<const std::uint64_t> column_seeds,
                          const RegularizerWeights& reg);

/// Loss only, same conventions as loss_and_grad.
double loss_value(const NetworkSpec& spec, const ParamSet& params, const MatrixXd& inputs, const MatrixXd& targets,
                  Mode mode, std::span<const std::uint64_t> column_seeds, const RegularizerWeights& reg);

/// Relaxed keep-mask of concrete dropout, 1 - sigmoid((logit(p) + logit(u)) / t).
double concrete_dropout_mask(double p, double temperature, double u);
void concrete_dropout_mask(double p, double temperature, std::span<const double> u, std::span<double> out);

}  // namespace abcd::nn
