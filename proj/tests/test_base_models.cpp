#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "hte/base_models.hpp"
#include "hte/errors.hpp"
#include "oracles.hpp"

using namespace hte;

namespace {

std::vector<ModelFamily> all_families() {
  return {ModelFamily::linear_gaussian(), ModelFamily::binomial_logit(),
          ModelFamily::proportional_odds(4), ModelFamily::weibull_ph(), ModelFamily::cox_partial()};
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

CenteredDesign robinson(const Dataset& d) {
  auto design = CenteredDesign::naive(d);
  design.variant = Variant::Robinson;
  return design;
}

}  // namespace

TEST_CASE("gaussian fit matches normal equations") {
  Rng rng(derive_seed(11, {}));
  const auto family = ModelFamily::linear_gaussian();
  for (int rep = 0; rep < 5; ++rep) {
    const auto data = oracle::random_family_data(family, 40, rng);
    const auto design = CenteredDesign::naive(data);
    std::vector<double> y, t, w;
    for (std::size_t i = 0; i < data.n(); ++i) {
      y.push_back(std::get<Continuous>(data[i].outcome).value);
      t.push_back(design.treatment_regressor[i]);
      w.push_back(rep == 0 ? 1.0 : 0.2 + uniform_open(rng));
    }
    const auto [a, b] = oracle::weighted_normal_equations(y, t, w);
    const auto fit = fit_node(family, data, w, design);
    CHECK(fit.mu == doctest::Approx(a).epsilon(1e-8));
    CHECK(fit.tau == doctest::Approx(b).epsilon(1e-8));
    CHECK(std::abs(fit.mu - a) < 1e-8);
    CHECK(std::abs(fit.tau - b) < 1e-8);
  }
}

TEST_CASE("separation is capped and flagged") {
  std::vector<Sample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back({{double(i)}, i % 2, Binary{i % 3 == 0}});
  const auto data = Dataset::create(samples);
  // Keep one treated (y = 1) and one control (y = 0) observation.
  std::vector<double> w(6, 0.0);
  w[3] = 1.0;  // treated, y = 1
  w[4] = 1.0;  // control, y = 0
  const auto fit = fit_node(ModelFamily::binomial_logit(), data, w, CenteredDesign::naive(data));
  CHECK(fit.capped);
  CHECK(std::abs(fit.tau) <= 30.0 + 1e-9);
  CHECK(fit.tau > 5.0);
}

TEST_CASE("constant outcome gives zero effect") {
  std::vector<Sample> samples;
  for (int i = 0; i < 8; ++i) samples.push_back({{double(i)}, i % 2, Continuous{3.25}});
  const auto data = Dataset::create(samples);
  auto design = robinson(data);
  for (auto& t : design.treatment_regressor) t -= 0.5;
  const auto fit = fit_node(ModelFamily::linear_gaussian(), data, ones(8), design);
  CHECK(fit.tau == 0.0);
  CHECK(fit.mu == doctest::Approx(3.25));
  CHECK(fit.phi > 0.0);
}

TEST_CASE("zero treatment variation is rank deficient") {
  std::vector<Sample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back({{double(i)}, i % 2, Continuous{double(i)}});
  const auto data = Dataset::create(samples);
  std::vector<double> w(6, 0.0);
  w[1] = w[3] = w[5] = 1.0;
  CHECK_THROWS_AS(fit_node(ModelFamily::linear_gaussian(), data, w, CenteredDesign::naive(data)),
                  RankDeficiencyError);
  CHECK_THROWS_AS(fit_node(ModelFamily::linear_gaussian(), data, std::vector<double>(6, 0.0),
                           CenteredDesign::naive(data)),
                  RankDeficiencyError);
}

TEST_CASE("negative log-likelihood hand values") {
  SUBCASE("binomial at zero") {
    const auto d = Dataset::create({{{0.0}, 1, Binary{1}}});
    const double v =
        neg_log_lik(ModelFamily::binomial_logit(), {}, d, ones(1), CenteredDesign::naive(d));
    CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("gaussian at its mean") {
    const auto d = Dataset::create({{{0.0}, 0, Continuous{1.7}}});
    ModelParams p;
    p.mu = 1.7;
    const double v = neg_log_lik(ModelFamily::linear_gaussian(), p, d, ones(1),
                                 CenteredDesign::naive(d));
    CHECK(v == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  }
  SUBCASE("proportional odds equal quarters") {
    ModelParams p;
    for (int k = 1; k < 4; ++k) p.theta.push_back(logit(k / 4.0));
    for (int level = 1; level <= 4; ++level) {
      const auto d = Dataset::create({{{0.0}, 0, Ordinal{level, 4}}});
      const double v = neg_log_lik(ModelFamily::proportional_odds(4), p, d, ones(1),
                                   CenteredDesign::naive(d));
      CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("gaussian score hand value") {
  const auto d = Dataset::create({{{0.0}, 1, Continuous{2.0}}});
  ModelParams p;
  p.mu = 1.0;
  p.tau = 0.5;
  const auto s = score(ModelFamily::linear_gaussian(), p, d, CenteredDesign::naive(d));
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("dina") {
  const auto f = ModelFamily::linear_gaussian();
  CHECK(dina(f, 1.0, 1.0) == 0.0);
  CHECK(dina(f, 0.0, 0.37) == 0.37);
  // Identity link: eta difference equals the difference in conditional means.
  ModelParams p;
  p.mu = 0.4;
  p.tau = 1.3;
  const double m0 = f.inverse_link(p.mu), m1 = f.inverse_link(p.mu + p.tau);
  CHECK(dina(f, p.mu, p.mu + p.tau) == doctest::Approx(m1 - m0));
}

TEST_CASE("family link properties") {
  const auto b = ModelFamily::binomial_logit();
  for (double eta = -700; eta <= 700; eta += 7) CHECK(*b.canonical_variance(eta) >= 0.0);
  for (double eta = -30; eta <= 30; eta += 0.5) CHECK(*b.canonical_variance(eta) > 0.0);
  CHECK_FALSE(ModelFamily::weibull_ph().canonical_variance(0.0).has_value());
  // Weibull survivor exp(-exp(h(t) - eta)) decreasing in t for nu2 > 0.
  const auto wb = ModelFamily::weibull_ph();
  double prev = 1.0;
  for (double t = 0.05; t < 5; t += 0.05) {
    const double surv = 1.0 - wb.inverse_link(0.3 + 1.4 * std::log(t) - 0.2);
    CHECK(surv < prev);
    prev = surv;
  }
  CHECK(ModelFamily::from_string("cox") == ModelFamily::cox_partial());
  CHECK(ModelFamily::from_string("po", 5) == ModelFamily::proportional_odds(5));
  CHECK_THROWS(ModelFamily::from_string("poisson"));
}

TEST_CASE("score matches finite differences for every family") {
  Rng rng(derive_seed(21, {}));
  for (const auto& family : all_families()) {
    CAPTURE(family.name());
    for (int rep = 0; rep < 5; ++rep) {
      const std::size_t n = 8 + 3 * rep;
      const auto data = oracle::random_family_data(family, n, rng);
      const auto design = oracle::random_design(data, rng);
      const auto params = oracle::random_params(family, rng);
      const auto s = score(family, params, data, design);
      const auto w = ones(n);
      const auto close = [](double a, double b) {
        return std::abs(a - b) <= 1e-4 * std::max(std::abs(a), std::abs(b)) + 1e-7;
      };
      double tau_total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        // Offset enters the linear predictor exactly like mu, one row at a time.
        const double fd_mu = oracle::central_difference(
            [&](double h) {
              auto shifted = design;
              shifted.offset[i] += h;
              return neg_log_lik(family, params, data, w, shifted);
            },
            0.0);
        CHECK(close(s(r, 0), -fd_mu));
        if (family.kind != FamilyKind::CoxPartial) {
          const std::size_t row[] = {i};
          const double fd_tau = oracle::central_difference(
              [&](double tau) {
                auto p = params;
                p.tau = tau;
                return neg_log_lik_rows(family, p, data, design, row);
              },
              params.tau);
          CHECK(close(s(r, 1), -fd_tau));
        }
        tau_total += s(r, 1);
      }
      const double fd_total = oracle::central_difference(
          [&](double tau) {
            auto p = params;
            p.tau = tau;
            return neg_log_lik(family, p, data, w, design);
          },
          params.tau);
      CHECK(close(tau_total, -fd_total));
      if (family.has_intercept()) {
        const double fd_mu_total = oracle::central_difference(
            [&](double mu) {
              auto p = params;
              p.mu = mu;
              return neg_log_lik(family, p, data, w, design);
            },
            params.mu);
        CHECK(close(s.col(0).sum(), -fd_mu_total));
      }
    }
  }
}

TEST_CASE("score columns vanish at the maximum") {
  Rng rng(derive_seed(31, {}));
  for (const auto& family : all_families()) {
    CAPTURE(family.name());
    for (int rep = 0; rep < 4; ++rep) {
      const std::size_t n = 60;
      const auto data = oracle::random_family_data(family, n, rng);
      const auto design = oracle::random_design(data, rng);
      const auto fit = fit_node(family, data, ones(n), design);
      REQUIRE_FALSE(fit.capped);
      const auto s = score(family, fit, data, design);
      CHECK(std::abs(s.col(0).sum()) < 1e-6 * n);
      CHECK(std::abs(s.col(1).sum()) < 1e-6 * n);
    }
  }
}

TEST_CASE("newton iterations never increase the objective") {
  Rng rng(derive_seed(41, {}));
  for (const auto& family : all_families()) {
    CAPTURE(family.name());
    for (int rep = 0; rep < 3; ++rep) {
      const auto data = oracle::random_family_data(family, 50, rng);
      const auto design = oracle::random_design(data, rng);
      std::vector<double> w(data.n());
      for (auto& v : w) v = 0.5 + uniform_open(rng);
      std::vector<double> trace;
      NewtonOptions opt;
      opt.trace = &trace;
      const auto fit = fit_node(family, data, w, design, opt);
      REQUIRE(trace.size() >= 2);
      for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1]);
      // The Gaussian path iterates at unit scale and profiles phi afterwards.
      auto at = fit;
      at.phi = 1.0;
      CHECK(trace.back() == doctest::Approx(neg_log_lik(family, at, data, w, design)));
    }
  }
}

TEST_CASE("weibull density is the shrinking interval limit") {
  Rng rng(derive_seed(51, {}));
  const auto family = ModelFamily::weibull_ph();
  const auto exact = oracle::random_family_data(family, 30, rng);
  std::vector<Sample> exact_samples, interval_samples;
  for (const auto& s : exact.samples()) {
    const double t = std::get<Survival>(s.outcome).time;
    exact_samples.push_back({s.covariates, s.treatment, Survival{t, true}});
    interval_samples.push_back({s.covariates, s.treatment, Interval{t, t + 1e-6}});
  }
  const auto a = Dataset::create(exact_samples);
  const auto b = Dataset::create(interval_samples);
  const auto design = oracle::random_design(a, rng);
  const auto fit = fit_node(family, a, ones(a.n()), design);
  for (std::size_t i = 0; i < a.n(); ++i) {
    const std::size_t row[] = {i};
    const double cont = neg_log_lik_rows(family, fit, a, design, row);
    const double interval = neg_log_lik_rows(family, fit, b, design, row) + std::log(1e-6);
    CHECK(std::abs(cont - interval) < 1e-3);
  }
}

TEST_CASE("ordinal probabilities sum to one") {
  const std::vector<double> theta = {-2.0, -0.3, 0.1, 1.7, 4.0};
  for (double eta = -60; eta <= 60; eta += 0.37) {
    const auto p = ordinal_probabilities(theta, eta);
    REQUIRE(p.size() == 6);
    double sum = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("cox martingale residuals sum to zero") {
  Rng rng(derive_seed(61, {}));
  const auto family = ModelFamily::cox_partial();
  auto samples = oracle::random_family_data(family, 40, rng).samples();
  // Tied times exercise the Breslow path.
  for (std::size_t i = 0; i + 1 < samples.size(); i += 4) samples[i + 1].outcome = samples[i].outcome;
  const auto data = Dataset::create(samples);
  const auto design = CenteredDesign::naive(data);
  const auto fit = fit_node(family, data, ones(data.n()), design);
  const auto s = score(family, fit, data, design);
  CHECK(std::abs(s.col(0).sum()) < 1e-9);
  CHECK(std::abs(s.col(1).sum()) < 1e-6);
  ModelParams other = fit;
  other.tau += 0.8;
  // The identity holds at any tau with mu fixed at zero.
  CHECK(std::abs(score(family, other, data, design).col(0).sum()) < 1e-9);
}

TEST_CASE("invalid parameters are rejected") {
  const auto d = Dataset::create({{{0.0}, 0, Ordinal{1, 3}}, {{0.0}, 1, Ordinal{2, 3}}});
  ModelParams p;
  p.theta = {0.5, -0.5};
  CHECK_THROWS(neg_log_lik(ModelFamily::proportional_odds(3), p, d, ones(2),
                           CenteredDesign::naive(d)));
  const auto s = Dataset::create({{{0.0}, 0, Survival{1.0, true}}});
  ModelParams q;
  q.nu2 = -1.0;
  CHECK_THROWS(neg_log_lik(ModelFamily::weibull_ph(), q, s, ones(1), CenteredDesign::naive(s)));
}
