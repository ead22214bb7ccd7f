#include <doctest.h>

#include <cmath>
#include <sstream>

#include "abcd/nn/checkpoint.hpp"
#include "abcd/nn/network.hpp"
#include "gradient_check.hpp"

using namespace abcd;
using namespace abcd::nn;

TEST_CASE("tensor validates shape and finiteness") {
  CHECK_NOTHROW(Tensor({2, 3}, std::vector<double>(6, 1.0)));
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 1.0)), Error);
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), Error);
}

TEST_CASE("zero-weight network returns the de-standardized bias") {
  NetworkSpec spec{{3}, {LayerSpec::dense(4, Activation::Relu)}, 2, HeadKind::Heteroscedastic};
  TrainedModel m = make_model(spec, 1);
  for (auto& l : m.params) {
    l.weight.setZero();
    l.bias.setZero();
  }
  m.params.back().bias << 0.5, -1.0, 0.0, std::log(2.0);
  m.standardization.shift = Eigen::Vector2d(10.0, 20.0);
  m.standardization.scale = Eigen::Vector2d(2.0, 3.0);
  const auto p = forward(m, Tensor({3}, {7.0, -1.0, 2.0}), Mode::Deterministic);
  CHECK(p.mean(0) == doctest::Approx(11.0));
  CHECK(p.mean(1) == doctest::Approx(17.0));
  CHECK(p.aleatoric(0) == doctest::Approx(4.0));
  CHECK(p.aleatoric(1) == doctest::Approx(2.0 * 9.0));
}

TEST_CASE("single dense weight 2 maps 3 to 6") {
  NetworkSpec spec{{1}, {}, 1, HeadKind::PointOnly};
  TrainedModel m = make_model(spec, 1);
  m.params.back().weight.setConstant(2.0);
  m.params.back().bias.setZero();
  CHECK(forward(m, Tensor({1}, {3.0}), Mode::Deterministic).mean(0) == doctest::Approx(6.0));
}

TEST_CASE("stochastic forward is reproducible given the noise seed") {
  NetworkSpec spec{{4}, {LayerSpec::dense(8, Activation::Relu), LayerSpec::concrete_dropout(0.3)}, 2};
  const TrainedModel m = make_model(spec, 3);
  const Tensor x({4}, {0.1, -0.4, 1.2, 0.7});
  const auto a = forward(m, x, Mode::StochasticDropout, 99);
  const auto b = forward(m, x, Mode::StochasticDropout, 99);
  const auto c = forward(m, x, Mode::StochasticDropout, 100);
  CHECK(a.mean == b.mean);
  CHECK(a.aleatoric == b.aleatoric);
  CHECK(a.mean != c.mean);
}

TEST_CASE("batched forward matches per-sample forward") {
  NetworkSpec spec{{9, 2},
                   {LayerSpec::conv1d(4, 3, Activation::Relu), LayerSpec::max_pool(2), LayerSpec::flatten(),
                    LayerSpec::concrete_dropout(0.2), LayerSpec::dense(5, Activation::Tanh)},
                   3};
  const TrainedModel m = make_model(spec, 5);
  Rng rng(11);
  MatrixXd x(18, 4);
  for (Index k = 0; k < x.size(); ++k) x.data()[k] = standard_normal(rng);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  const auto batch = forward_batch(m, x, Mode::StochasticDropout, seeds);
  for (Index b = 0; b < 4; ++b) {
    const auto single = forward(m, Tensor::from_vector(x.col(b), {9, 2}), Mode::StochasticDropout, seeds[b]);
    CHECK((single.mean - batch.mean.col(b)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("a pass split at the deterministic prefix equals the full pass") {
  NetworkSpec spec{{9, 2},
                   {LayerSpec::conv1d(4, 3, Activation::Relu), LayerSpec::max_pool(2), LayerSpec::flatten(),
                    LayerSpec::concrete_dropout(0.2), LayerSpec::dense(5, Activation::Tanh),
                    LayerSpec::concrete_dropout(0.3)},
                   3};
  const TrainedModel m = make_model(spec, 6);
  CHECK(deterministic_prefix(spec) == 3);
  Rng rng(12);
  MatrixXd x(18, 3);
  for (Index k = 0; k < x.size(); ++k) x.data()[k] = standard_normal(rng);
  const std::vector<std::uint64_t> seeds{7, 8, 9};
  const auto full = forward_batch(m, x, Mode::StochasticDropout, seeds);
  const MatrixXd mid = forward_prefix(m, x, 3);
  CHECK(mid.rows() == 12);
  const auto split = forward_batch_from(m, 3, mid, Mode::StochasticDropout, seeds);
  CHECK((split.mean - full.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((split.aleatoric - full.aleatoric).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(forward_batch_from(m, 0, x, Mode::Deterministic).mean == forward_batch(m, x, Mode::Deterministic).mean);
  CHECK_THROWS_AS(forward_batch_from(m, 3, x, Mode::Deterministic), Error);
}

TEST_CASE("shape mismatches are rejected") {
  NetworkSpec spec{{5, 1}, {LayerSpec::conv1d(2, 3, Activation::Relu), LayerSpec::dense(3, Activation::Relu)}, 1};
  CHECK_THROWS_AS(plan_geometry(spec), Error);
  NetworkSpec ok{{5}, {LayerSpec::dense(3, Activation::Relu)}, 1};
  const TrainedModel m = make_model(ok, 1);
  CHECK_THROWS_AS(forward(m, Tensor({4}, {1, 2, 3, 4}), Mode::Deterministic), Error);
}

TEST_CASE("PointOnly loss is half the squared error and zero on exact fit") {
  NetworkSpec spec{{1}, {}, 2, HeadKind::PointOnly};
  ParamSet p = initialize(spec, 1);
  p.back().weight << 1.0, 2.0;
  p.back().bias << 0.0, 0.0;
  MatrixXd x(1, 2);
  x << 1.0, 2.0;
  MatrixXd t(2, 2);
  t << 1.0, 3.0, 2.0, 4.0;  // residuals (0, 0) and (1, 0)
  CHECK(loss_value(spec, p, x, t, Mode::Deterministic, {}, {}) == doctest::Approx(0.5 * 1.0 / 2.0));

  NetworkSpec het{{1}, {}, 1, HeadKind::Heteroscedastic};
  ParamSet q = initialize(het, 1);
  q.back().weight << 1.0, 0.0;
  q.back().bias << 0.0, 0.0;  // sigma^2 = 1
  MatrixXd tt(1, 2);
  tt << 1.0, 2.0;
  CHECK(loss_value(het, q, x, tt, Mode::Deterministic, {}, {}) == doctest::Approx(0.0));
}

TEST_CASE("analytic gradients match central differences for every layer kind") {
  using testing::GradientKind;
  for (auto kind : {GradientKind::Dense, GradientKind::Conv1D, GradientKind::Conv2D, GradientKind::MaxPool,
                    GradientKind::ConcreteDropout, GradientKind::Heteroscedastic}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto c = testing::make_gradient_case(kind, 1000 + s);
      const auto r = testing::check_gradients(c);
      CAPTURE(testing::to_string(kind));
      CAPTURE(s);
      CHECK(r.coordinates > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("relaxed dropout mask") {
  CHECK(concrete_dropout_mask(1e-9, 0.1, 0.5) > 0.999);
  CHECK(concrete_dropout_mask(0.5, 1.0, 0.5) == doctest::Approx(0.5));
  CHECK_THROWS_AS(concrete_dropout_mask(0.0, 0.1, 0.5), Error);
  CHECK_THROWS_AS(concrete_dropout_mask(1.0, 0.1, 0.5), Error);

  Rng rng(2024);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = concrete_dropout_mask(0.3, 0.1, open_uniform(rng));
    // Keep values within 1e-16 of 1 round to 1 in double precision.
    CHECK_UNARY(z > 0.0);
    CHECK_UNARY(z <= 1.0);
    sum += z;
  }
  CHECK(std::abs(sum / n - 0.7) < 0.01);
}

TEST_CASE("standardization round trip") {
  MatrixXd th(2, 4);
  th << 1, 2, 3, 4, -5, 0, 5, 10;
  const auto s = Standardization::fit(th);
  for (Index i = 0; i < 4; ++i) CHECK((s.invert(s.apply(th.col(i))) - th.col(i)).norm() < 1e-12);
  const MatrixXd z = s.apply_columns(th);
  CHECK(std::abs(z.row(0).mean()) < 1e-12);
  MatrixXd flat(1, 3);
  flat << 2, 2, 2;
  CHECK(Standardization::fit(flat).scale(0) == 1.0);
}

TEST_CASE("aleatoric output is positive even for extreme log-variance") {
  NetworkSpec spec{{2}, {}, 1, HeadKind::Heteroscedastic};
  TrainedModel m = make_model(spec, 1);
  m.params.back().weight.setZero();
  m.params.back().bias << 0.0, -40.0;
  CHECK(forward(m, Tensor({2}, {1, 1}), Mode::Deterministic).aleatoric(0) > 0.0);
}

TEST_CASE("checkpoint round trip is exact") {
  NetworkSpec spec{{6, 1},
                   {LayerSpec::conv1d(3, 2, Activation::Relu), LayerSpec::max_pool(2), LayerSpec::flatten(),
                    LayerSpec::concrete_dropout(0.15), LayerSpec::dense(4, Activation::Tanh)},
                   2};
  TrainedModel m = make_model(spec, 8);
  m.standardization.shift = Eigen::Vector2d(0.25, -1.0 / 3.0);
  m.standardization.scale = Eigen::Vector2d(M_PI, 1e-7);
  m.record = {8, 12, 9, 0.123456789012345, -0.2};
  std::stringstream buf;
  write_checkpoint(buf, m, {{"config_hash", "abc"}});
  nlohmann::json prov;
  const TrainedModel back = read_checkpoint(buf, &prov);
  CHECK(back == m);
  CHECK(prov.at("config_hash") == "abc");

  std::stringstream bad("ABCD-CHECKPOINT 99\n2\n{}\n");
  CHECK_THROWS_AS(read_checkpoint(bad), Error);
}
