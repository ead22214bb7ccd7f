#include <doctest.h>

#include <cmath>
#include <sstream>

#include "abcd/sim/models.hpp"
#include "abcd/sim/reference_table.hpp"

using namespace abcd;
using namespace abcd::sim;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("MA(2) prior is uniform on the triangle") {
  Rng rng(1);
  const int n = 100000;
  int upper = 0;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_ma2_prior(rng);
    REQUIRE(t.in_support());
    upper += t.theta2 > 0.0;
  }
  // Triangle (-2, 1), (2, 1), (0, -1) has area 4; the part above theta2 = 0
  // is a trapezoid with parallel sides 4 and 2 and height 1, area 3.
  CHECK(std::abs(static_cast<double>(upper) / n - 0.75) < 0.01);
}

TEST_CASE("GRF and LV priors stay in support") {
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const VectorXd g = sample_prior(ModelTag::Grf, s);
    CHECK(g(0) > 0.0);
    CHECK(g(0) < 1.0);
    const VectorXd c = sample_prior(ModelTag::LotkaVolterra, s);
    for (Index i = 0; i < 3; ++i) {
      CHECK(std::log(c(i)) >= -6.0);
      CHECK(std::log(c(i)) <= 2.0);
    }
    CHECK(in_prior_support(ModelTag::Ma2, sample_prior(ModelTag::Ma2, s)));
  }
}

TEST_CASE("MA(2) simulation") {
  CHECK(simulate_ma2({0.5, 0.3}, 100, 4).size() == 100);
  CHECK(simulate_ma2({0.5, 0.3}, 100, 4) == simulate_ma2({0.5, 0.3}, 100, 4));
  CHECK_THROWS_AS(simulate_ma2({1.5, 0.0}, 100, 4), Error);
  CHECK_THROWS_AS(simulate_ma2({0.0, 0.0}, 2, 4), Error);

  const int n = 100000;
  std::vector<double> white(n), lag0(n), lag1(n), lag2(n), lag3(n);
  for (int i = 0; i < n; ++i) {
    const VectorXd w = simulate_ma2({0.0, 0.0}, 3, static_cast<std::uint64_t>(i));
    white[static_cast<std::size_t>(i)] = w(2);
    const VectorXd x = simulate_ma2({0.5, 0.3}, 5, 1000000 + static_cast<std::uint64_t>(i));
    lag0[static_cast<std::size_t>(i)] = x(4) * x(4);
    lag1[static_cast<std::size_t>(i)] = x(4) * x(3);
    lag2[static_cast<std::size_t>(i)] = x(4) * x(2);
    lag3[static_cast<std::size_t>(i)] = x(4) * x(1);
  }
  CHECK(std::abs(var_of(white) - 1.0) < 0.02);
  const Ma2Params t{0.5, 0.3};
  CHECK(ma2_autocovariance(t, 1) == doctest::Approx(0.65));
  const std::vector<std::vector<double>*> lags{&lag0, &lag1, &lag2, &lag3};
  for (Index k = 0; k < 4; ++k) {
    const auto& v = *lags[static_cast<std::size_t>(k)];
    const double se = std::sqrt(var_of(v) / n);
    CHECK(std::abs(mean_of(v) - ma2_autocovariance(t, k)) < 4.0 * se);
  }
  CHECK(ma2_autocovariance(t, 3) == 0.0);
}

TEST_CASE("GRF moments and correlation") {
  const GrfConfig cfg{16, 5.0, GrfMethod::Separable};
  const double theta = 0.8;
  const int reps = 1000;
  std::vector<double> centre(reps), a(reps), b(reps), c(reps), grand(reps);
  for (int r = 0; r < reps; ++r) {
    const MatrixXd f = simulate_grf(theta, cfg, static_cast<std::uint64_t>(r));
    centre[static_cast<std::size_t>(r)] = f(7, 7);
    a[static_cast<std::size_t>(r)] = f(3, 4);
    b[static_cast<std::size_t>(r)] = f(3, 5);  // one step
    c[static_cast<std::size_t>(r)] = f(5, 6);  // (2, 2) steps away from a
    grand[static_cast<std::size_t>(r)] = f.mean();
  }
  const double se = 1.0 / std::sqrt(static_cast<double>(reps));
  CHECK(std::abs(mean_of(centre)) < 3.5 * se);
  CHECK(std::abs(var_of(centre) - 1.0) < 3.5 * std::sqrt(2.0) * se);
  auto corr = [&](const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (int r = 0; r < reps; ++r) {
      sxy += (x[static_cast<std::size_t>(r)] - mx) * (y[static_cast<std::size_t>(r)] - my);
      sxx += (x[static_cast<std::size_t>(r)] - mx) * (x[static_cast<std::size_t>(r)] - mx);
      syy += (y[static_cast<std::size_t>(r)] - my) * (y[static_cast<std::size_t>(r)] - my);
    }
    return sxy / std::sqrt(sxx * syy);
  };
  const double h = 5.0 / 15.0;
  const double rho1 = std::exp(-std::pow(h / theta, 2));
  const double rho2 = std::exp(-std::pow(std::sqrt(8.0) * h / theta, 2));
  // Standard error of a sample correlation is about (1 - rho^2) / sqrt(n).
  CHECK(std::abs(corr(a, b) - rho1) < 4.0 * (1 - rho1 * rho1) * se + 1e-3);
  CHECK(std::abs(corr(a, c) - rho2) < 4.0 * (1 - rho2 * rho2) * se);
  CHECK(grf_covariance(cfg, theta, 3, 4, 3, 4) == 1.0);
}

TEST_CASE("separable and dense GRF factorizations give the same field") {
  GrfConfig cfg{12, 5.0, GrfMethod::Dense};
  const MatrixXd dense = simulate_grf(0.3, cfg, 5);
  cfg.method = GrfMethod::Separable;
  const MatrixXd sep = simulate_grf(0.3, cfg, 5);
  CHECK((dense - sep).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(simulate_grf(0.3, cfg, 5) == sep);
  CHECK_THROWS_AS(simulate_grf(0.0, cfg, 5), Error);
}

TEST_CASE("LV hazards") {
  const auto h = lv_hazards({1.0, 0.005, 0.6}, 50, 100);
  CHECK(h[0] == doctest::Approx(50.0));
  CHECK(h[1] == doctest::Approx(25.0));
  CHECK(h[2] == doctest::Approx(60.0));
  CHECK(h[0] + h[1] + h[2] == doctest::Approx(135.0));
}

TEST_CASE("pure prey birth grows like 50 exp(c1 t)") {
  LvOptions opts;
  opts.n_obs = 2;
  opts.obs_interval = 2.0;
  const double c1 = 0.3;
  const int n = 10000;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) {
    const auto tr = simulate_lv({c1, 0.0, 0.0}, LvMethod::ExactGillespie, static_cast<std::uint64_t>(i), opts);
    REQUIRE(tr.has_value());
    x[static_cast<std::size_t>(i)] = static_cast<double>(tr->prey[1]);
  }
  const double expect = 50.0 * std::exp(c1 * 2.0);
  CHECK(std::abs(mean_of(x) - expect) < 3.0 * std::sqrt(var_of(x) / n));
}

TEST_CASE("pure predator death matches a per-individual simulation") {
  LvOptions opts;
  opts.n_obs = 2;
  opts.obs_interval = 5.0;
  const double c3 = 1.0;
  const int n = 10000;
  int extinct = 0, oracle_extinct = 0;
  std::exponential_distribution<double> life(c3);
  Rng rng(123);
  for (int i = 0; i < n; ++i) {
    extinct += !simulate_lv({0.0, 0.0, c3}, LvMethod::ExactGillespie, static_cast<std::uint64_t>(i), opts).has_value();
    double longest = 0.0;
    for (int k = 0; k < 100; ++k) longest = std::max(longest, life(rng));
    oracle_extinct += longest < 5.0;
  }
  const double p = std::pow(1.0 - std::exp(-c3 * 5.0), 100);
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(static_cast<double>(extinct) / n - p) < 4.0 * se);
  CHECK(std::abs(static_cast<double>(extinct - oracle_extinct) / n) < 4.0 * std::sqrt(2.0) * se);
}

TEST_CASE("exact trajectories move only by the three stoichiometries") {
  LvOptions opts;
  opts.obs_interval = 0.001;  // dense sampling sees at most a few events per gap
  opts.n_obs = 2000;
  const auto tr = simulate_lv({1.0, 0.005, 0.6}, LvMethod::ExactGillespie, 3, opts);
  REQUIRE(tr.has_value());
  for (Index t = 1; t < tr->size(); ++t) {
    const auto d1 = tr->prey[static_cast<std::size_t>(t)] - tr->prey[static_cast<std::size_t>(t - 1)];
    const auto d2 = tr->predator[static_cast<std::size_t>(t)] - tr->predator[static_cast<std::size_t>(t - 1)];
    CHECK(std::abs(d1) + std::abs(d2) <= 8);
  }
}

namespace {

// Column 2t holds prey at observation t, column 2t + 1 predators.
std::vector<std::vector<double>> lv_moments(LvMethod method, const LvOptions& opts, int n, std::uint64_t offset) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(2 * opts.n_obs));
  for (int i = 0; i < n; ++i) {
    const auto tr = simulate_lv({1.0, 0.005, 0.6}, method, offset + static_cast<std::uint64_t>(i), opts);
    if (!tr) continue;
    for (Index t = 0; t < opts.n_obs; ++t) {
      out[static_cast<std::size_t>(2 * t)].push_back(static_cast<double>(tr->prey[static_cast<std::size_t>(t)]));
      out[static_cast<std::size_t>(2 * t + 1)].push_back(static_cast<double>(tr->predator[static_cast<std::size_t>(t)]));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("tau-leap converges to the exact method") {
  LvOptions opts;
  opts.n_obs = 4;  // t = 0, 2, 4, 6
  const int n = 4000;
  const auto exact = lv_moments(LvMethod::ExactGillespie, opts, n, 0);
  REQUIRE(exact[0].size() > 3500);
  // The leap carries an O(tau) bias: about 2% on these means at the default
  // step, so the default is held to a relative band and a finer step to the
  // Monte Carlo error.
  for (const double tau : {0.01, 0.001}) {
    opts.tau = tau;
    const auto leap = lv_moments(LvMethod::TauLeap, opts, n, 777777);
    REQUIRE(leap[0].size() > 3500);
    for (std::size_t k = 2; k < exact.size(); ++k) {
      const double diff = std::abs(mean_of(exact[k]) - mean_of(leap[k]));
      const double se = std::sqrt(var_of(exact[k]) / static_cast<double>(exact[k].size()) +
                                  var_of(leap[k]) / static_cast<double>(leap[k].size()));
      if (tau == 0.01) {
        CHECK(diff < 0.05 * mean_of(exact[k]));
      } else {
        CHECK(diff < 3.5 * se);
      }
    }
  }
}

TEST_CASE("LV event budget and extinction") {
  LvOptions opts;
  opts.max_events = 1000;
  CHECK_THROWS_AS(simulate_lv({7.0, 1e-6, 1e-3}, LvMethod::ExactGillespie, 1, opts), EventBudgetExceeded);
  CHECK_THROWS_AS(simulate_lv({7.0, 1e-6, 1e-3}, LvMethod::TauLeap, 1, opts), EventBudgetExceeded);
  CHECK_FALSE(simulate_lv({1e-3, 1e-3, 5.0}, LvMethod::TauLeap, 1).has_value());
  CHECK_THROWS_AS(simulate_lv({-1.0, 1.0, 1.0}, LvMethod::TauLeap, 1), Error);
  const auto tr = simulate_lv({1.0, 0.005, 0.6}, LvMethod::TauLeap, 2);
  if (tr) {
    CHECK(tr->size() == 19);
    CHECK(LvTrajectory::from_vector(tr->to_vector()).prey == tr->prey);
    for (Index t = 0; t < 19; ++t) CHECK(tr->prey[static_cast<std::size_t>(t)] > 0);
  }
}

TEST_CASE("reference tables are deterministic and round-trip losslessly") {
  for (ModelTag m : {ModelTag::Ma2, ModelTag::Grf, ModelTag::LotkaVolterra}) {
    TableOptions opts;
    opts.grf.grid = 8;
    const auto a = generate_reference_table(m, 12, 99, opts);
    const auto b = generate_reference_table(m, 12, 99, opts);
    CHECK(a == b);
    CHECK(a.size() == 12);
    for (const auto& r : a.records) {
      CHECK(in_prior_support(m, r.theta));
      CHECK(r.seed == derive_seed(99, static_cast<std::uint64_t>(r.index)));
    }
    std::stringstream text, bin;
    write_ndjson(text, a, {{"config_hash", "x"}});
    nlohmann::json prov;
    CHECK(read_ndjson(text, &prov) == a);
    CHECK(prov.at("config_hash") == "x");
    write_binary(bin, a);
    CHECK(read_binary(bin) == a);
    CHECK_FALSE(generate_reference_table(m, 12, 100, opts) == a);
  }
  CHECK(generate_reference_table(ModelTag::Ma2, 3, 1).data_shape == std::vector<Index>{100, 1});
  CHECK_THROWS_AS(generate_reference_table(ModelTag::Ma2, 0, 1), Error);
  TableOptions tight;
  tight.max_attempts = 1;
  tight.lv.max_events = 1;
  CHECK_THROWS_AS(generate_reference_table(ModelTag::LotkaVolterra, 2, 1, tight), Error);
}
