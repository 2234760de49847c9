#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "hte/dgp.hpp"
#include "hte/errors.hpp"
#include "oracles.hpp"

using namespace hte;

namespace {

std::vector<double> zeros(std::size_t p) { return std::vector<double>(p, 0.0); }

}  // namespace

TEST_CASE("propensities at hand-evaluated points") {
  const auto A = Scenario::parse("A"), B = Scenario::parse("B"), C = Scenario::parse("C"),
             D = Scenario::parse("D");
  CHECK(propensity(C, zeros(10)) == 0.5);
  CHECK(propensity(D, zeros(10)) == 1.0 / 3.0);
  CHECK(propensity(A, zeros(10)) == 0.1);
  CHECK(propensity(B, std::vector<double>(10, 0.7)) == 0.5);
  // sin(pi / 2) = 1 is clamped to 0.9.
  std::vector<double> x(10, 0.0);
  x[0] = 1.0;
  x[1] = 0.5;
  CHECK(propensity(A, x) == 0.9);
  x[1] = 1.0 / 6.0;  // sin(pi / 6) = 1/2
  CHECK(propensity(A, x) == doctest::Approx(0.5).epsilon(1e-15));
  x = zeros(10);
  x[1] = std::log(3.0);
  CHECK(propensity(C, x) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("effects and prognostic functions at hand-evaluated points") {
  const auto A = Scenario::parse("A"), B = Scenario::parse("B"), C = Scenario::parse("C"),
             D = Scenario::parse("D");
  std::vector<double> x(10, 1.0);
  CHECK(tau_fn(A, x) == 1.0);
  CHECK(tau_fn(B, zeros(10)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(mu_fn(D, zeros(10)) == 0.0);
  CHECK(tau_fn(D, zeros(10)) == 0.0);
  CHECK(tau_fn(C, x) == 1.0);
  CHECK(mu_fn(C, zeros(10)) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  // max{x1 + x2, x3, 0} + max{x4 + x5, 0} at (1, 1, 3, -1, -1) = 3.
  std::vector<double> b{1.0, 1.0, 3.0, -1.0, -1.0, 0, 0, 0, 0, 0};
  CHECK(mu_fn(B, b) == 3.0);
  // sin(0) + 2 (0.5)^2 + 0 + 0.5 * 1.
  std::vector<double> a{0.0, 0.3, 1.0, 0.0, 1.0, 0, 0, 0, 0, 0};
  CHECK(mu_fn(A, a) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> d{1.0, 1.0, 1.0, 2.0, 0.0, 0, 0, 0, 0, 0};
  CHECK(tau_fn(D, d) == 1.0);
  CHECK(mu_fn(D, d) == 2.5);
}

TEST_CASE("additive-predictor scenarios") {
  CHECK(beta24_density(0.5) == doctest::Approx(20.0 * 0.5 * 0.125).epsilon(1e-15));
  const auto wa1 = Scenario::parse("WA1"), wa2 = Scenario::parse("WA2"), wa10 = Scenario::parse("WA10");
  CHECK(wa1.treatment_shift() == 0.0);
  CHECK(wa10.treatment_shift() == 0.5);
  CHECK(wa10.name() == "WA10");
  CHECK(tau_fn(wa1, std::vector<double>(4, 0.9)) == 0.0);
  // Each factor is 1 + expit(0) = 1.5 at x = 1/3.
  CHECK(tau_fn(wa2, std::vector<double>(4, 1.0 / 3.0)) == doctest::Approx(2.25).epsilon(1e-14));
  CHECK_THROWS(Scenario::parse("WA17"));
  CHECK_THROWS(Scenario::parse("E"));
}

TEST_CASE("ground truth invariants") {
  for (const char* name : {"B", "C"}) {
    DgpSpec spec;
    spec.scenario = Scenario::parse(name);
    spec.n = 500;
    spec.seed = 3;
    const auto [data, truth] = sample(spec);
    for (std::size_t i = 0; i < data.n(); ++i) {
      if (spec.scenario.setup == Setup::C) CHECK(truth.tau[i] == 1.0);
      if (spec.scenario.setup == Setup::B) CHECK(truth.pi[i] == 0.5);
      CHECK(truth.tau[i] == tau_fn(spec.scenario, data[i].covariates));
    }
    CHECK(data.covariate_names().front() == "x1");
  }
  DgpSpec a;
  a.scenario = Scenario::parse("A");
  a.n = 300;
  const auto [data, truth] = sample(a);
  for (const auto& s : data.samples())
    for (double v : s.covariates) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
}

TEST_CASE("randomization in setup B") {
  DgpSpec spec;
  spec.scenario = Scenario::parse("B");
  spec.n = 4000;
  spec.seed = 5;
  const auto [data, truth] = sample(spec);
  const double mean = static_cast<double>(data.count_treated()) / 4000.0;
  CHECK(std::abs(mean - 0.5) < 3.0 / std::sqrt(4000.0));
}

TEST_CASE("treatment tracks the propensity in bins") {
  for (const char* name : {"A", "C", "D"}) {
    DgpSpec spec;
    spec.scenario = Scenario::parse(name);
    spec.n = 20000;
    spec.seed = 6;
    const auto [data, truth] = sample(spec);
    std::vector<std::size_t> order(data.n());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return truth.pi[i] < truth.pi[j]; });
    for (std::size_t b = 0; b < 20; ++b) {
      double w = 0.0, pi = 0.0, var = 0.0;
      for (std::size_t k = b * 1000; k < (b + 1) * 1000; ++k) {
        w += data.w(order[k]);
        pi += truth.pi[order[k]];
        var += truth.pi[order[k]] * (1.0 - truth.pi[order[k]]);
      }
      // 4.5 sd keeps the family-wise error over all 60 bins below 0.1%.
      CHECK(std::abs(w - pi) < 4.5 * std::sqrt(var));
    }
  }
}

TEST_CASE("multinomial null frequencies are quarters") {
  Rng rng(derive_seed(71, {}));
  const std::size_t n = 20000;
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t i = 0; i < n; ++i) ++counts[std::get<Ordinal>(draw_outcome(OutcomeFamily::Multinomial4, 0.0, rng)).level - 1];
  for (std::size_t c : counts) CHECK(std::abs(static_cast<double>(c) / n - 0.25) < 3.0 / std::sqrt(double(n)));
}

TEST_CASE("uncensored weibull median") {
  Rng rng(derive_seed(72, {}));
  std::vector<double> y;
  for (int i = 0; i < 20001; ++i) y.push_back(std::get<Survival>(draw_outcome(OutcomeFamily::Weibull, 0.0, rng)).time);
  std::nth_element(y.begin(), y.begin() + 10000, y.end());
  // Median sqrt(log 2); the sample median has sd about 1 / (2 f(m) sqrt(n)).
  const double m = std::sqrt(std::log(2.0));
  const double f = 2.0 * m * std::exp(-m * m);
  CHECK(std::abs(y[10000] - m) < 4.0 / (2.0 * f * std::sqrt(20001.0)));
  CHECK(m == doctest::Approx(0.8326).epsilon(1e-4));
}

TEST_CASE("censoring fraction near one half") {
  for (const char* name : {"A", "B", "C", "D"})
    for (std::size_t p : {10u, 20u}) {
      DgpSpec spec;
      spec.scenario = Scenario::parse(name);
      spec.outcome = OutcomeFamily::Weibull;
      spec.n = 5000;
      spec.p = p;
      spec.seed = 7;
      const auto [data, truth] = sample(spec);
      double censored = 0.0;
      for (const auto& s : data.samples()) censored += !std::get<Survival>(s.outcome).event;
      CHECK(censored / 5000.0 >= 0.45);
      CHECK(censored / 5000.0 <= 0.55);
    }
}

TEST_CASE("same spec and seed give identical data") {
  DgpSpec spec;
  spec.scenario = Scenario::parse("D");
  spec.outcome = OutcomeFamily::Weibull;
  spec.n = 200;
  spec.seed = 8;
  CHECK(write_csv_text(sample(spec).first) == write_csv_text(sample(spec).first));
  const auto other = spec;
  spec.seed = 9;
  CHECK(write_csv_text(sample(spec).first) != write_csv_text(sample(other).first));
}

TEST_CASE("spec validation") {
  DgpSpec spec;
  spec.p = 3;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec.p = 10;
  spec.outcome = OutcomeFamily::Normal;
  spec.fit_family_override = ModelFamily::cox_partial();
  CHECK_THROWS(spec.validate());
  spec.outcome = OutcomeFamily::Weibull;
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.fit_family() == ModelFamily::cox_partial());
  CHECK(outcome_family_from_string("multinomial") == OutcomeFamily::Multinomial4);
}
