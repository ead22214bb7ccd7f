#include <doctest.h>

#include <Eigen/Cholesky>

#include "abcd/mc_dropout.hpp"

using namespace abcd;
using namespace abcd::nn;

namespace {

TrainedModel dropout_model(double p, std::uint64_t seed) {
  const NetworkSpec spec{{5},
                         {LayerSpec::dense(16, Activation::Relu), LayerSpec::concrete_dropout(p),
                          LayerSpec::dense(16, Activation::Relu), LayerSpec::concrete_dropout(p)},
                         3};
  TrainedModel m = make_model(spec, seed);
  for (auto& l : m.params) l.bias.setConstant(0.1);
  return m;
}

MatrixXd two_pass_covariance(const MatrixXd& x) {
  const Index k = x.cols();
  VectorXd mean = VectorXd::Zero(x.rows());
  for (Index j = 0; j < k; ++j) mean += x.col(j);
  mean /= static_cast<double>(k);
  MatrixXd cov = MatrixXd::Zero(x.rows(), x.rows());
  for (Index j = 0; j < k; ++j) {
    for (Index a = 0; a < x.rows(); ++a)
      for (Index b = 0; b < x.rows(); ++b) cov(a, b) += (x(a, j) - mean(a)) * (x(b, j) - mean(b));
  }
  return cov / static_cast<double>(k - 1);
}

}  // namespace

TEST_CASE("two passes {0, 2} with aleatoric 1") {
  MatrixXd means(1, 2);
  means << 0.0, 2.0;
  MatrixXd ale(1, 2);
  ale << 1.0, 1.0;
  const auto p = decompose_passes<double>(means, ale);
  CHECK(p.mean(0) == 1.0);
  CHECK(p.epistemic_cov(0, 0) == 2.0);
  CHECK(p.overall_cov(0, 0) == 3.0);
  CHECK(p.passes == 2);
  CHECK_THROWS_AS(decompose_passes<double>(means.leftCols(1), ale.leftCols(1)), Error);
}

TEST_CASE("decomposition identity holds bitwise and matches a two-pass covariance") {
  Rng rng(17);
  for (int rep = 0; rep < 50; ++rep) {
    const Index d = 1 + rep % 4, k = 5 + rep;
    MatrixXd means(d, k), ale(d, k);
    for (Index i = 0; i < means.size(); ++i) means.data()[i] = standard_normal(rng);
    for (Index i = 0; i < ale.size(); ++i) ale.data()[i] = std::exp(standard_normal(rng));
    const auto p = decompose_passes<double>(means, ale);
    MatrixXd expect = p.epistemic_cov;
    expect.diagonal() += p.aleatoric;
    CHECK(p.overall_cov == expect);
    CHECK((p.epistemic_cov - two_pass_covariance(means)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.epistemic_cov == p.epistemic_cov.transpose());
  }
}

TEST_CASE("batched MC prediction equals K single passes with the derived seeds") {
  const TrainedModel m = dropout_model(0.3, 4);
  const Tensor x({5}, {0.2, -1.0, 0.5, 1.5, -0.3});
  const Index k = 30;
  const auto pred = predict_mc(m, x, k, 77);
  MatrixXd means(3, k), ale(3, k);
  for (Index j = 0; j < k; ++j) {
    const auto f = forward(m, x, Mode::StochasticDropout, pass_seed(77, j));
    means.col(j) = f.mean;
    ale.col(j) = f.aleatoric;
  }
  const auto oracle = decompose_passes<double>(means, ale);
  CHECK((pred.mean - oracle.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pred.epistemic_cov - oracle.epistemic_cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pred.aleatoric - oracle.aleatoric).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pred.overall_cov - oracle.overall_cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pred.aleatoric.array() > 0.0).all());
}

TEST_CASE("near-zero dropout gives identical passes") {
  const TrainedModel m = dropout_model(1e-12, 4);
  const auto pred = predict_mc(m, Tensor({5}, {1, 2, 3, 4, 5}), 10, 1);
  CHECK(pred.epistemic_cov.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pred.overall_cov - MatrixXd(pred.aleatoric.asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("MC prediction preconditions") {
  const TrainedModel m = dropout_model(0.2, 1);
  const Tensor x({5}, {1, 2, 3, 4, 5});
  CHECK_THROWS_AS(predict_mc(m, x, 1, 1), Error);
  const TrainedModel plain = make_model(NetworkSpec{{5}, {LayerSpec::dense(3, Activation::Relu)}, 1}, 1);
  CHECK_THROWS_AS(predict_mc(plain, x, 10, 1), Error);
}

TEST_CASE("mean estimate concentrates as K grows") {
  const TrainedModel m = dropout_model(0.4, 9);
  const Tensor x({5}, {0.5, 0.1, -0.7, 1.1, 0.9});
  double prev = 1e300;
  for (Index k : {10, 100, 1000}) {
    VectorXd est(20);
    for (int r = 0; r < 20; ++r) est(r) = predict_mc(m, x, k, 1000 + r).mean(0);
    const double sd = std::sqrt((est.array() - est.mean()).square().sum() / 19.0);
    CHECK(sd < prev);
    prev = sd;
  }
}

TEST_CASE("uncertainty matrix") {
  DropoutPrediction p;
  p.mean = VectorXd::Zero(1);
  p.epistemic_cov = MatrixXd::Zero(1, 1);
  p.aleatoric = VectorXd::Constant(1, 4.0);
  p.overall_cov = MatrixXd::Constant(1, 1, 4.0);
  p.passes = 10;
  const auto v = uncertainty_matrix(p, UncertaintyKind::Overall, 0.0);
  CHECK(v.matrix(0, 0) == 4.0);
  CHECK_FALSE(v.degenerate);

  const auto e = uncertainty_matrix(p, UncertaintyKind::Epistemic, 1e-8);
  CHECK(e.matrix(0, 0) == 1e-8);
  CHECK(e.degenerate);
  CHECK_THROWS_AS(uncertainty_matrix(p, UncertaintyKind::Epistemic, 0.0), Error);
  CHECK_THROWS_AS(uncertainty_matrix(p, UncertaintyKind::Overall, -1.0), Error);

  const TrainedModel m = dropout_model(0.3, 2);
  const auto pred = predict_mc(m, Tensor({5}, {1, -1, 0.5, 0.2, 0.3}), 50, 3);
  const auto u = uncertainty_matrix(pred, UncertaintyKind::Overall);
  const Eigen::LLT<MatrixXd> llt(u.matrix);
  const MatrixXd l = llt.matrixL();
  CHECK((l * l.transpose() - u.matrix).cwiseAbs().maxCoeff() < 1e-10);
}
