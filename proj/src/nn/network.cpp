#include "abcd/nn/network.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace abcd::nn {

namespace {

const char* kModule = "tensor-nn";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// Counter-based uniform on (0, 1); one stream per (column seed, layer).
inline double noise_uniform(std::uint64_t stream, std::uint64_t k) {
  return (static_cast<double>(mix64(stream + k * 0x9e3779b97f4a7c15ULL) >> 11) + 0.5) * 0x1.0p-53;
}

bool is_weighted(LayerKind kind) {
  return kind == LayerKind::Dense || kind == LayerKind::Conv1D || kind == LayerKind::Conv2D;
}

struct Workspace {
  std::vector<MatrixXd> inputs;  // inputs[i] feeds layer i; inputs.back() feeds the head
  MatrixXd head_out;
  std::vector<MatrixXd> aux;     // conv: im2col columns, dropout: relaxed drop indicator
  std::vector<std::vector<Index>> argmax;
};

void apply_activation(Activation act, MatrixXd& m) {
  switch (act) {
    case Activation::Linear: break;
    case Activation::Relu: m = m.cwiseMax(0.0); break;
    case Activation::Tanh: m = m.array().tanh().matrix(); break;
  }
}

// Multiplies grad in place by the activation derivative, expressed through the output.
void activation_backward(Activation act, const MatrixXd& out, MatrixXd& grad) {
  switch (act) {
    case Activation::Linear: break;
    case Activation::Relu: grad = (out.array() > 0.0).select(grad, 0.0); break;
    case Activation::Tanh: grad.array() *= 1.0 - out.array().square(); break;
  }
}

void im2col(const MatrixXd& x, const Geometry& g, Index kh, Index kw, MatrixXd& cols) {
  const Index ho = g.h - kh + 1, wo = g.w - kw + 1, batch = x.cols();
  const Index block = kw * g.c;
  cols.resize(kh * block, batch * ho * wo);
  for (Index b = 0; b < batch; ++b) {
    const double* src = x.col(b).data();
    for (Index oh = 0; oh < ho; ++oh) {
      for (Index ow = 0; ow < wo; ++ow) {
        double* dst = cols.col((b * ho + oh) * wo + ow).data();
        for (Index j = 0; j < kh; ++j) {
          const double* row = src + ((oh + j) * g.w + ow) * g.c;
          std::copy(row, row + block, dst + j * block);
        }
      }
    }
  }
}

void col2im(const MatrixXd& dcols, const Geometry& g, Index kh, Index kw, MatrixXd& dx) {
  const Index ho = g.h - kh + 1, wo = g.w - kw + 1, batch = dx.cols();
  const Index block = kw * g.c;
  dx.setZero();
  for (Index b = 0; b < batch; ++b) {
    double* dst = dx.col(b).data();
    for (Index oh = 0; oh < ho; ++oh) {
      for (Index ow = 0; ow < wo; ++ow) {
        const double* src = dcols.col((b * ho + oh) * wo + ow).data();
        for (Index j = 0; j < kh; ++j) {
          double* row = dst + ((oh + j) * g.w + ow) * g.c;
          for (Index k = 0; k < block; ++k) row[k] += src[j * block + k];
        }
      }
    }
  }
}

Index kernel_h(const LayerSpec& l) { return l.kind == LayerKind::Conv2D ? l.kernel : 1; }
Index pool_h(const LayerSpec& l, const Geometry& g) { return g.rank == 3 ? l.pool : 1; }

// Runs layers [first, last) on x, the input of layer `first`; last == layers.size() also applies the head.
void run_forward(const NetworkSpec& spec, const std::vector<Geometry>& geo, const ParamSet& params,
                 const MatrixXd& x, Mode mode, std::span<const std::uint64_t> seeds, Workspace& ws,
                 std::size_t first = 0, std::size_t last = std::numeric_limits<std::size_t>::max()) {
  const std::size_t n_layers = spec.layers.size();
  last = std::min(last, n_layers);
  if (first > last) fail("invalid layer range");
  const Index batch = x.cols();
  if (x.rows() != geo[first].size()) {
    fail("input size " + std::to_string(x.rows()) + " does not match network input " +
         std::to_string(geo[first].size()));
  }
  if (mode == Mode::StochasticDropout && static_cast<Index>(seeds.size()) != batch) {
    fail("stochastic forward needs one noise seed per column");
  }
  ws.inputs.resize(n_layers + 1);
  ws.aux.resize(n_layers);
  ws.argmax.resize(n_layers);
  ws.inputs[first] = x;
  for (std::size_t i = first; i < last; ++i) {
    const LayerSpec& layer = spec.layers[i];
    const Geometry& gin = geo[i];
    const Geometry& gout = geo[i + 1];
    const MatrixXd& in = ws.inputs[i];
    MatrixXd& out = ws.inputs[i + 1];
    const LayerParams& p = params[i];
    switch (layer.kind) {
      case LayerKind::Dense:
        out.noalias() = p.weight * in;
        out.colwise() += p.bias;
        apply_activation(layer.activation, out);
        break;
      case LayerKind::Conv1D:
      case LayerKind::Conv2D: {
        const Index kh = kernel_h(layer), kw = layer.kernel;
        MatrixXd& cols = ws.aux[i];
        im2col(in, gin, kh, kw, cols);
        out.resize(gout.size(), batch);
        Eigen::Map<MatrixXd> y(out.data(), gout.c, batch * gout.h * gout.w);
        y.noalias() = p.weight * cols;
        y.colwise() += p.bias;
        apply_activation(layer.activation, out);
        break;
      }
      case LayerKind::MaxPool: {
        const Index ph = pool_h(layer, gin), pw = layer.pool;
        out.resize(gout.size(), batch);
        auto& arg = ws.argmax[i];
        arg.resize(static_cast<std::size_t>(gout.size() * batch));
        for (Index b = 0; b < batch; ++b) {
          const double* src = in.col(b).data();
          double* dst = out.col(b).data();
          for (Index oh = 0; oh < gout.h; ++oh) {
            for (Index ow = 0; ow < gout.w; ++ow) {
              for (Index c = 0; c < gout.c; ++c) {
                Index best = ((oh * ph) * gin.w + ow * pw) * gin.c + c;
                for (Index dh = 0; dh < ph; ++dh) {
                  for (Index dw = 0; dw < pw; ++dw) {
                    const Index k = ((oh * ph + dh) * gin.w + ow * pw + dw) * gin.c + c;
                    if (src[k] > src[best]) best = k;
                  }
                }
                const Index o = (oh * gout.w + ow) * gout.c + c;
                dst[o] = src[best];
                arg[static_cast<std::size_t>(b * gout.size() + o)] = best;
              }
            }
          }
        }
        break;
      }
      case LayerKind::Flatten:
        out = in;
        break;
      case LayerKind::ConcreteDropout: {
        if (mode == Mode::Deterministic) {
          out = in;
          break;
        }
        const double prob = sigmoid(p.dropout_logit);
        const double inv_t = 1.0 / spec.dropout_temperature;
        MatrixXd& drop = ws.aux[i];
        drop.resize(in.rows(), batch);
        for (Index b = 0; b < batch; ++b) {
          const std::uint64_t stream = derive_seed(seeds[static_cast<std::size_t>(b)], i);
          for (Index r = 0; r < in.rows(); ++r) {
            const double u = noise_uniform(stream, static_cast<std::uint64_t>(r));
            drop(r, b) = sigmoid((p.dropout_logit + std::log(u) - std::log1p(-u)) * inv_t);
          }
        }
        out = in.cwiseProduct((1.0 - drop.array()).matrix()) / (1.0 - prob);
        break;
      }
      case LayerKind::Activation:
        out = in;
        apply_activation(layer.activation, out);
        break;
    }
  }
  if (last < n_layers) return;
  const LayerParams& head = params[n_layers];
  ws.head_out.noalias() = head.weight * ws.inputs[n_layers];
  ws.head_out.colwise() += head.bias;
  if (!ws.head_out.allFinite()) fail("non-finite activation at network output (divergence)");
}

void run_backward(const NetworkSpec& spec, const std::vector<Geometry>& geo, const ParamSet& params, Mode mode,
                  Workspace& ws, const MatrixXd& d_head, ParamSet& grads) {
  const std::size_t n_layers = spec.layers.size();
  {
    const MatrixXd& in = ws.inputs[n_layers];
    grads[n_layers].weight.noalias() += d_head * in.transpose();
    grads[n_layers].bias += d_head.rowwise().sum();
  }
  MatrixXd grad = params[n_layers].weight.transpose() * d_head;
  for (std::size_t i = n_layers; i-- > 0;) {
    const LayerSpec& layer = spec.layers[i];
    const Geometry& gin = geo[i];
    const Geometry& gout = geo[i + 1];
    const MatrixXd& in = ws.inputs[i];
    const MatrixXd& out = ws.inputs[i + 1];
    const LayerParams& p = params[i];
    LayerParams& g = grads[i];
    const bool need_input_grad = i > 0;
    switch (layer.kind) {
      case LayerKind::Dense:
        activation_backward(layer.activation, out, grad);
        g.weight.noalias() += grad * in.transpose();
        g.bias += grad.rowwise().sum();
        if (need_input_grad) grad = p.weight.transpose() * grad;
        break;
      case LayerKind::Conv1D:
      case LayerKind::Conv2D: {
        activation_backward(layer.activation, out, grad);
        const Index batch = grad.cols();
        const Index kh = kernel_h(layer), kw = layer.kernel;
        Eigen::Map<const MatrixXd> dy(grad.data(), gout.c, batch * gout.h * gout.w);
        const MatrixXd& cols = ws.aux[i];
        g.weight.noalias() += dy * cols.transpose();
        g.bias += dy.rowwise().sum();
        if (need_input_grad) {
          MatrixXd dcols = p.weight.transpose() * dy;
          MatrixXd dx(gin.size(), batch);
          col2im(dcols, gin, kh, kw, dx);
          grad = std::move(dx);
        }
        break;
      }
      case LayerKind::MaxPool: {
        const Index batch = grad.cols();
        MatrixXd dx = MatrixXd::Zero(gin.size(), batch);
        const auto& arg = ws.argmax[i];
        for (Index b = 0; b < batch; ++b) {
          for (Index o = 0; o < gout.size(); ++o) {
            dx(arg[static_cast<std::size_t>(b * gout.size() + o)], b) += grad(o, b);
          }
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::Flatten:
        break;
      case LayerKind::ConcreteDropout: {
        if (mode == Mode::Deterministic) break;
        const double prob = sigmoid(p.dropout_logit);
        const double inv_t = 1.0 / spec.dropout_temperature;
        const auto z = ws.aux[i].array();
        // d(keep / (1 - p)) / d logit(p)
        const auto dscale = (-z * (1.0 - z) * inv_t + (1.0 - z) * prob) / (1.0 - prob);
        g.dropout_logit += (grad.array() * in.array() * dscale).sum();
        grad = (grad.array() * (1.0 - z) / (1.0 - prob)).matrix();
        break;
      }
      case LayerKind::Activation:
        activation_backward(layer.activation, out, grad);
        break;
    }
  }
}

// Weighted layer whose kernel each dropout layer feeds (first one downstream).
std::map<std::size_t, std::size_t> dropout_targets(const NetworkSpec& spec) {
  std::map<std::size_t, std::size_t> targets;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::ConcreteDropout) continue;
    std::size_t j = i + 1;
    while (j < spec.layers.size() && !is_weighted(spec.layers[j].kind)) ++j;
    targets[i] = j;  // j == layers.size() means the head
  }
  return targets;
}

double regularizer(const NetworkSpec& spec, const std::vector<Geometry>& geo, const ParamSet& params,
                   const RegularizerWeights& reg, ParamSet* grads) {
  if (reg.weight == 0.0 && reg.dropout == 0.0) return 0.0;
  double total = 0.0;
  for (auto [i, j] : dropout_targets(spec)) {
    const double logit = params[i].dropout_logit;
    const double p = sigmoid(logit);
    const double sq = params[j].weight.squaredNorm();
    const double features = static_cast<double>(geo[i].size());
    const double neg_entropy = p * std::log(p) + (1.0 - p) * std::log1p(-p);
    total += reg.weight * sq / (1.0 - p) + reg.dropout * features * neg_entropy;
    if (grads) {
      (*grads)[j].weight += (2.0 * reg.weight / (1.0 - p)) * params[j].weight;
      (*grads)[i].dropout_logit += reg.weight * sq * p / (1.0 - p) + reg.dropout * features * logit * p * (1.0 - p);
    }
  }
  return total;
}

// Data term and its gradient with respect to the raw head output.
double gaussian_nll(const NetworkSpec& spec, const MatrixXd& head_out, const MatrixXd& targets, MatrixXd* d_head) {
  const Index dim = spec.output_dim;
  const Index batch = head_out.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const auto mean = head_out.topRows(dim).array();
  const auto resid = targets.array() - mean;
  if (spec.head == HeadKind::PointOnly) {
    if (d_head) *d_head = (-resid * inv_b).matrix();
    return 0.5 * resid.square().sum() * inv_b;
  }
  const auto logvar = head_out.bottomRows(dim).array();
  const auto precision = (-logvar).exp();
  const double loss = 0.5 * (logvar + resid.square() * precision).sum() * inv_b;
  if (d_head) {
    d_head->resize(2 * dim, batch);
    d_head->topRows(dim) = (-resid * precision * inv_b).matrix();
    d_head->bottomRows(dim) = (0.5 * (1.0 - resid.square() * precision) * inv_b).matrix();
  }
  return loss;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv1D: return "conv1d";
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::ConcreteDropout: return "concrete_dropout";
    case LayerKind::Activation: return "activation";
  }
  return "?";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

std::string to_string(HeadKind head) {
  return head == HeadKind::PointOnly ? "point" : "heteroscedastic";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::Dense, LayerKind::Conv1D, LayerKind::Conv2D, LayerKind::MaxPool, LayerKind::Flatten,
                 LayerKind::ConcreteDropout, LayerKind::Activation}) {
    if (to_string(k) == s) return k;
  }
  fail("unknown layer kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::Linear, Activation::Relu, Activation::Tanh}) {
    if (to_string(a) == s) return a;
  }
  fail("unknown activation '" + s + "'");
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "point") return HeadKind::PointOnly;
  if (s == "heteroscedastic") return HeadKind::Heteroscedastic;
  fail("unknown head kind '" + s + "'");
}

LayerSpec LayerSpec::dense(Index units, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.units = units;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::conv1d(Index channels, Index kernel, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::Conv1D;
  l.channels = channels;
  l.kernel = kernel;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::conv2d(Index channels, Index kernel, Activation act) {
  LayerSpec l = conv1d(channels, kernel, act);
  l.kind = LayerKind::Conv2D;
  return l;
}

LayerSpec LayerSpec::max_pool(Index window) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool;
  l.pool = window;
  return l;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

LayerSpec LayerSpec::concrete_dropout(double initial_p) {
  LayerSpec l;
  l.kind = LayerKind::ConcreteDropout;
  l.initial_dropout = initial_p;
  return l;
}

LayerSpec LayerSpec::activation_layer(Activation act) {
  LayerSpec l;
  l.kind = LayerKind::Activation;
  l.activation = act;
  return l;
}

bool NetworkSpec::has_dropout() const {
  for (const auto& l : layers) {
    if (l.kind == LayerKind::ConcreteDropout) return true;
  }
  return false;
}

std::vector<Geometry> plan_geometry(const NetworkSpec& spec) {
  Geometry g;
  switch (spec.input_shape.size()) {
    case 1: g = {1, 1, spec.input_shape[0], 1}; break;
    case 2: g = {1, spec.input_shape[0], spec.input_shape[1], 2}; break;
    case 3: g = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 3}; break;
    default: fail("input shape must have rank 1, 2 or 3");
  }
  if (g.size() < 1) fail("input shape has a zero extent");
  if (spec.output_dim < 1) fail("output dimension must be >= 1");
  if (!(spec.dropout_temperature > 0.0)) fail("dropout temperature must be positive");
  std::vector<Geometry> geo{g};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + "): ";
    switch (l.kind) {
      case LayerKind::Dense:
        if (g.rank != 1) fail(where + "dense layers need a flattened input");
        if (l.units < 1) fail(where + "units must be >= 1");
        g = {1, 1, l.units, 1};
        break;
      case LayerKind::Conv1D:
      case LayerKind::Conv2D: {
        const bool two_d = l.kind == LayerKind::Conv2D;
        if (g.rank != (two_d ? 3 : 2)) fail(where + "input rank does not match convolution");
        if (l.kernel < 1) fail(where + "kernel size must be >= 1");
        if (l.channels < 1) fail(where + "channels must be >= 1");
        const Index kh = two_d ? l.kernel : 1;
        if (g.w < l.kernel || g.h < kh) fail(where + "kernel larger than input");
        g = {g.h - kh + 1, g.w - l.kernel + 1, l.channels, g.rank};
        break;
      }
      case LayerKind::MaxPool: {
        if (g.rank < 2) fail(where + "pooling needs a spatial input");
        if (l.pool < 1) fail(where + "pool window must be >= 1");
        const Index ph = g.rank == 3 ? l.pool : 1;
        if (g.w < l.pool || g.h < ph) fail(where + "pool window larger than input");
        g = {g.h / ph, g.w / l.pool, g.c, g.rank};
        break;
      }
      case LayerKind::Flatten:
        g = {1, 1, g.size(), 1};
        break;
      case LayerKind::ConcreteDropout:
        if (!(l.initial_dropout > 0.0 && l.initial_dropout < 1.0)) {
          fail(where + "initial dropout probability must lie in (0, 1)");
        }
        break;
      case LayerKind::Activation:
        break;
    }
    geo.push_back(g);
  }
  if (g.rank != 1) fail("network output must be flattened before the head");
  return geo;
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet z(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    z[i].weight = MatrixXd::Zero(params[i].weight.rows(), params[i].weight.cols());
    z[i].bias = VectorXd::Zero(params[i].bias.size());
    z[i].dropout_logit = 0.0;
  }
  return z;
}

ParamSet initialize(const NetworkSpec& spec, std::uint64_t seed) {
  const auto geo = plan_geometry(spec);
  ParamSet params(spec.layers.size() + 1);
  auto fill = [](MatrixXd& w, double limit, Rng& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index j = 0; j < w.cols(); ++j)
      for (Index r = 0; r < w.rows(); ++r) w(r, j) = dist(rng);
  };
  auto limit_for = [](Activation act, double fan_in, double fan_out) {
    return act == Activation::Relu ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
  };
  for (std::size_t i = 0; i <= spec.layers.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const Geometry& gin = geo[i];
    if (i == spec.layers.size()) {
      params[i].weight.resize(spec.head_width(), gin.size());
      fill(params[i].weight, limit_for(Activation::Linear, gin.size(), spec.head_width()), rng);
      params[i].bias = VectorXd::Zero(spec.head_width());
      break;
    }
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
        params[i].weight.resize(l.units, gin.size());
        fill(params[i].weight, limit_for(l.activation, gin.size(), l.units), rng);
        params[i].bias = VectorXd::Zero(l.units);
        break;
      case LayerKind::Conv1D:
      case LayerKind::Conv2D: {
        const Index taps = kernel_h(l) * l.kernel;
        params[i].weight.resize(l.channels, taps * gin.c);
        fill(params[i].weight, limit_for(l.activation, taps * gin.c, taps * l.channels), rng);
        params[i].bias = VectorXd::Zero(l.channels);
        break;
      }
      case LayerKind::ConcreteDropout:
        params[i].dropout_logit = std::log(l.initial_dropout) - std::log1p(-l.initial_dropout);
        break;
      default:
        break;
    }
  }
  return params;
}

Standardization Standardization::identity(Index dim) {
  return {VectorXd::Zero(dim), VectorXd::Ones(dim)};
}

Standardization Standardization::fit(const MatrixXd& thetas) {
  if (thetas.cols() < 1) fail("cannot fit standardization on an empty set");
  Standardization s;
  s.shift = thetas.rowwise().mean();
  s.scale.resize(thetas.rows());
  for (Index d = 0; d < thetas.rows(); ++d) {
    const double n = static_cast<double>(thetas.cols());
    const double var = thetas.cols() > 1 ? (thetas.row(d).array() - s.shift(d)).square().sum() / (n - 1.0) : 0.0;
    s.scale(d) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

MatrixXd Standardization::apply_columns(const MatrixXd& thetas) const {
  return (thetas.colwise() - shift).array().colwise() / scale.array();
}

std::vector<double> TrainedModel::dropout_probabilities() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::ConcreteDropout) out.push_back(sigmoid(params[i].dropout_logit));
  }
  return out;
}

TrainedModel make_model(const NetworkSpec& spec, std::uint64_t seed) {
  TrainedModel m;
  m.spec = spec;
  m.params = initialize(spec, seed);
  m.standardization = Standardization::identity(spec.output_dim);
  m.record.seed = seed;
  return m;
}

namespace {

BatchPrediction to_parameter_units(const TrainedModel& model, const Workspace& ws, Index batch) {
  const Index dim = model.spec.output_dim;
  const auto& st = model.standardization;
  BatchPrediction out;
  out.mean = (ws.head_out.topRows(dim).array().colwise() * st.scale.array()).colwise() + st.shift.array();
  if (model.spec.head == HeadKind::Heteroscedastic) {
    out.aleatoric = ws.head_out.bottomRows(dim).array().exp().colwise() * st.scale.array().square();
  } else {
    out.aleatoric = (MatrixXd::Ones(dim, batch).array().colwise() * st.scale.array().square()).matrix();
  }
  return out;
}

}  // namespace

BatchPrediction forward_batch(const TrainedModel& model, const MatrixXd& inputs, Mode mode,
                              std::span<const std::uint64_t> column_seeds) {
  return forward_batch_from(model, 0, inputs, mode, column_seeds);
}

std::size_t deterministic_prefix(const NetworkSpec& spec) {
  std::size_t i = 0;
  while (i < spec.layers.size() && spec.layers[i].kind != LayerKind::ConcreteDropout) ++i;
  return i;
}

MatrixXd forward_prefix(const TrainedModel& model, const MatrixXd& inputs, std::size_t n_layers) {
  if (n_layers > model.spec.layers.size()) fail("prefix longer than the network");
  const auto geo = plan_geometry(model.spec);
  Workspace ws;
  run_forward(model.spec, geo, model.params, inputs, Mode::Deterministic, {}, ws, 0, n_layers);
  return std::move(ws.inputs[n_layers]);
}

BatchPrediction forward_batch_from(const TrainedModel& model, std::size_t first_layer, const MatrixXd& activations,
                                   Mode mode, std::span<const std::uint64_t> column_seeds) {
  if (first_layer > model.spec.layers.size()) fail("start layer beyond the network");
  const auto geo = plan_geometry(model.spec);
  Workspace ws;
  run_forward(model.spec, geo, model.params, activations, mode, column_seeds, ws, first_layer);
  return to_parameter_units(model, ws, activations.cols());
}

Prediction forward(const TrainedModel& model, const Tensor& x, Mode mode, std::uint64_t noise_seed) {
  if (x.shape != model.spec.input_shape) fail("input tensor shape does not match the network input shape");
  const std::uint64_t seeds[1] = {noise_seed};
  auto batch = forward_batch(model, x.flat(), mode,
                             mode == Mode::StochasticDropout ? std::span<const std::uint64_t>(seeds)
                                                             : std::span<const std::uint64_t>());
  return {batch.mean.col(0), batch.aleatoric.col(0)};
}

LossAndGrad loss_and_grad(const NetworkSpec& spec, const ParamSet& params, const MatrixXd& inputs,
                          const MatrixXd& targets, Mode mode, std::span<const std::uint64_t> column_seeds,
                          const RegularizerWeights& reg) {
  if (inputs.cols() == 0) fail("loss_and_grad on an empty batch");
  if (targets.cols() != inputs.cols() || targets.rows() != spec.output_dim) fail("target shape mismatch");
  const auto geo = plan_geometry(spec);
  Workspace ws;
  run_forward(spec, geo, params, inputs, mode, column_seeds, ws);
  LossAndGrad out;
  MatrixXd d_head;
  out.data_loss = gaussian_nll(spec, ws.head_out, targets, &d_head);
  out.grads = zeros_like(params);
  run_backward(spec, geo, params, mode, ws, d_head, out.grads);
  out.loss = out.data_loss + regularizer(spec, geo, params, reg, &out.grads);
  if (!std::isfinite(out.loss)) fail("non-finite loss");
  return out;
}

double loss_value(const NetworkSpec& spec, const ParamSet& params, const MatrixXd& inputs, const MatrixXd& targets,
                  Mode mode, std::span<const std::uint64_t> column_seeds, const RegularizerWeights& reg) {
  if (inputs.cols() == 0) fail("loss on an empty batch");
  const auto geo = plan_geometry(spec);
  Workspace ws;
  run_forward(spec, geo, params, inputs, mode, column_seeds, ws);
  return gaussian_nll(spec, ws.head_out, targets, nullptr) + regularizer(spec, geo, params, reg, nullptr);
}

double concrete_dropout_mask(double p, double temperature, double u) {
  if (!(p > 0.0 && p < 1.0)) fail("dropout probability must lie in (0, 1)");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (!(u > 0.0 && u < 1.0)) fail("uniform draw must lie in (0, 1)");
  const double arg = (std::log(p) - std::log1p(-p) + std::log(u) - std::log1p(-u)) / temperature;
  return sigmoid(-arg);
}

void concrete_dropout_mask(double p, double temperature, std::span<const double> u, std::span<double> out) {
  if (u.size() != out.size()) fail("mask buffer size mismatch");
  for (std::size_t k = 0; k < u.size(); ++k) out[k] = concrete_dropout_mask(p, temperature, u[k]);
}

}  // namespace abcd::nn
