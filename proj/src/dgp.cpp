#include "hte/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include <fmt/format.h>

#include "hte/errors.hpp"
#include "hte/rng.hpp"

namespace hte {

namespace {

double softplus1(double z) { return softplus(z); }

// Wager-Athey treatment effect: prod_{p=1,2} (1 + 1 / (1 + exp(-20 (x_p - 1/3)))).
double wa_tau(std::span<const double> x) {
  double t = 1.0;
  for (int k = 0; k < 2; ++k) t *= 1.0 + expit(20.0 * (x[k] - 1.0 / 3.0));
  return t;
}

double wa_pi(double v) { return 0.25 * (1.0 + beta24_density(v)); }

struct WaRow {
  int mu_var;  // -1: no prognostic effect, else covariate index
  bool tau;
  int pi_var;  // -1: randomized
};

WaRow wa_row(int row) {
  static constexpr WaRow rows[8] = {{2, false, 2}, {-1, true, -1}, {0, true, 0}, {0, true, -1},
                                    {2, true, -1}, {2, true, 2},   {-1, true, 2}, {2, true, 3}};
  return rows[(row - 1) % 8];
}

}  // namespace

Scenario Scenario::parse(const std::string& name) {
  if (name == "A") return {Setup::A, 0};
  if (name == "B") return {Setup::B, 0};
  if (name == "C") return {Setup::C, 0};
  if (name == "D") return {Setup::D, 0};
  if (name.size() > 2 && name.starts_with("WA")) {
    try {
      std::size_t used = 0;
      const int row = std::stoi(name.substr(2), &used);
      if (used == name.size() - 2 && row >= 1 && row <= 16) return {Setup::WA, row};
    } catch (const std::exception&) {
    }
  }
  throw ArgumentError("unknown setup '" + name + "' (expected A, B, C, D or WA1..WA16)");
}

std::string Scenario::name() const {
  switch (setup) {
    case Setup::A: return "A";
    case Setup::B: return "B";
    case Setup::C: return "C";
    case Setup::D: return "D";
    case Setup::WA: return fmt::format("WA{}", wa_row);
  }
  return "?";
}

double Scenario::treatment_shift() const {
  if (setup == Setup::WA) return wa_row > 8 ? 0.5 : 0.0;
  return 0.5;
}

bool Scenario::uniform_covariates() const { return setup == Setup::A || setup == Setup::WA; }

std::size_t Scenario::min_covariates() const { return setup == Setup::WA ? 4 : 5; }

std::string to_string(OutcomeFamily f) {
  switch (f) {
    case OutcomeFamily::Normal: return "normal";
    case OutcomeFamily::Binomial: return "binomial";
    case OutcomeFamily::Multinomial4: return "multinomial";
    case OutcomeFamily::Weibull: return "weibull";
  }
  return "?";
}

OutcomeFamily outcome_family_from_string(const std::string& name) {
  if (name == "normal" || name == "gaussian") return OutcomeFamily::Normal;
  if (name == "binomial") return OutcomeFamily::Binomial;
  if (name == "multinomial" || name == "ordinal") return OutcomeFamily::Multinomial4;
  if (name == "weibull") return OutcomeFamily::Weibull;
  throw ArgumentError("unknown outcome family '" + name + "'");
}

ModelFamily default_fit_family(OutcomeFamily f) {
  switch (f) {
    case OutcomeFamily::Normal: return ModelFamily::linear_gaussian();
    case OutcomeFamily::Binomial: return ModelFamily::binomial_logit();
    case OutcomeFamily::Multinomial4: return ModelFamily::proportional_odds(4);
    case OutcomeFamily::Weibull: return ModelFamily::weibull_ph();
  }
  return ModelFamily::linear_gaussian();
}

ModelFamily DgpSpec::fit_family() const {
  return fit_family_override ? *fit_family_override : default_fit_family(outcome);
}

void DgpSpec::validate() const {
  if (n < 1) throw ArgumentError("n must be positive");
  if (p < scenario.min_covariates())
    throw ArgumentError(fmt::format("setup {} needs at least {} covariates", scenario.name(),
                                    scenario.min_covariates()));
  if (!(censoring >= 0.0 && censoring < 1.0)) throw ArgumentError("censoring must lie in [0, 1)");
  if (fit_family_override) {
    const bool survival = outcome == OutcomeFamily::Weibull;
    const auto k = fit_family_override->kind;
    const bool ok = survival ? (k == FamilyKind::WeibullPH || k == FamilyKind::CoxPartial)
                             : *fit_family_override == default_fit_family(outcome);
    if (!ok)
      throw ArgumentError(fmt::format("fit family {} does not match {} outcomes",
                                      fit_family_override->name(), to_string(outcome)));
  }
}

double beta24_density(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return 20.0 * x * std::pow(1.0 - x, 3);
}

double propensity(const Scenario& s, std::span<const double> x) {
  switch (s.setup) {
    case Setup::A:
      return std::max(0.1, std::min(std::sin(std::numbers::pi * x[0] * x[1]), 1.0 - 0.1));
    case Setup::B: return 0.5;
    case Setup::C: return 1.0 / (1.0 + std::exp(x[1] + x[2]));
    case Setup::D: return 1.0 / (1.0 + std::exp(-x[0]) + std::exp(-x[1]));
    case Setup::WA: {
      const int v = wa_row(s.wa_row).pi_var;
      return v < 0 ? 0.5 : wa_pi(x[v]);
    }
  }
  return 0.5;
}

double tau_fn(const Scenario& s, std::span<const double> x) {
  switch (s.setup) {
    case Setup::A: return 0.5 * (x[0] + x[1]);
    case Setup::B: return x[0] + softplus1(x[1]);
    case Setup::C: return 1.0;
    case Setup::D:
      return std::max(x[0] + x[1] + x[2], 0.0) - std::max(x[3] + x[4], 0.0);
    case Setup::WA: return wa_row(s.wa_row).tau ? wa_tau(x) : 0.0;
  }
  return 0.0;
}

double mu_fn(const Scenario& s, std::span<const double> x) {
  switch (s.setup) {
    case Setup::A:
      return std::sin(std::numbers::pi * x[0] * x[1]) + 2.0 * (x[2] - 0.5) * (x[2] - 0.5) + x[3] +
             0.5 * x[4];
    case Setup::B:
      return std::max({x[0] + x[1], x[2], 0.0}) + std::max(x[3] + x[4], 0.0);
    case Setup::C: return 2.0 * softplus1(x[0] + x[1] + x[2]);
    case Setup::D:
      return 0.5 * (std::max(x[0] + x[1] + x[2], 0.0) + std::max(x[3] + x[4], 0.0));
    case Setup::WA: {
      const int v = wa_row(s.wa_row).mu_var;
      return v < 0 ? 0.0 : 2.0 * x[v] - 1.0;
    }
  }
  return 0.0;
}

namespace {

struct Draw {
  std::vector<double> x;
  int w = 0;
  double tau = 0.0, mu = 0.0, pi = 0.0, eta = 0.0;
};

Draw draw_unit(const Scenario& s, std::size_t p, Rng& rng) {
  Draw d;
  d.x.resize(p);
  for (auto& v : d.x) v = s.uniform_covariates() ? uniform_open(rng) : standard_normal(rng);
  d.pi = propensity(s, d.x);
  d.w = uniform_open(rng) < d.pi ? 1 : 0;
  d.tau = tau_fn(s, d.x);
  d.mu = mu_fn(s, d.x);
  d.eta = d.mu + d.tau * (d.w - s.treatment_shift());
  return d;
}

// Weibull event time with log cumulative hazard 2 log y - eta.
double weibull_time(double eta, Rng& rng) {
  const double e = -std::log(uniform_open(rng));
  return std::sqrt(e * std::exp(eta));
}

}  // namespace

double censoring_rate(const Scenario& s, std::size_t p, double target) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, std::size_t, double>, double> cache;
  const auto key = std::make_tuple(static_cast<int>(s.setup), s.wa_row, p, target);
  {
    std::lock_guard lock(mutex);
    if (const auto it = cache.find(key); it != cache.end()) return it->second;
  }
  constexpr std::size_t kPresample = 50000;
  Rng rng(derive_seed(0x63656e736f72ULL, {static_cast<std::uint64_t>(s.setup),
                                           static_cast<std::uint64_t>(s.wa_row), p}));
  std::vector<double> y(kPresample);
  for (auto& v : y) v = weibull_time(draw_unit(s, p, rng).eta, rng);
  // P(C < Y) = E[1 - exp(-rate Y)] is increasing in the rate.
  auto fraction = [&](double log_rate) {
    const double rate = std::exp(log_rate);
    double f = 0.0;
    for (double v : y) f += -std::expm1(-rate * v);
    return f / static_cast<double>(y.size());
  };
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fraction(mid) < target ? lo : hi) = mid;
  }
  const double rate = std::exp(0.5 * (lo + hi));
  std::lock_guard lock(mutex);
  cache.emplace(key, rate);
  return rate;
}

OutcomeValue draw_outcome(OutcomeFamily family, double eta, Rng& rng) {
  switch (family) {
    case OutcomeFamily::Normal:
      return Continuous{eta + standard_normal(rng)};
    case OutcomeFamily::Binomial:
      return Binary{uniform_open(rng) < expit(eta) ? 1 : 0};
    case OutcomeFamily::Multinomial4: {
      // Latent logistic: P(Y <= k) = expit(theta_k - eta).
      static const double theta[3] = {logit(0.25), 0.0, logit(0.75)};
      const double u = uniform_open(rng);
      const double latent = std::log(u) - std::log1p(-u) + eta;
      int level = 1;
      for (double t : theta) level += latent > t ? 1 : 0;
      return Ordinal{level, 4};
    }
    case OutcomeFamily::Weibull:
      return Survival{weibull_time(eta, rng), true};
  }
  throw ArgumentError("unknown outcome family");
}

std::pair<Dataset, GroundTruth> sample(const DgpSpec& spec) {
  spec.validate();
  const Scenario& s = spec.scenario;
  const bool censor = spec.outcome == OutcomeFamily::Weibull && spec.censoring > 0.0;
  const double rate = censor ? censoring_rate(s, spec.p, spec.censoring) : 0.0;
  Rng rng(spec.seed);
  std::vector<Sample> samples;
  samples.reserve(spec.n);
  GroundTruth truth;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Draw d = draw_unit(s, spec.p, rng);
    Sample smp;
    smp.treatment = d.w;
    smp.outcome = draw_outcome(spec.outcome, d.eta, rng);
    if (censor) {
      const double y = std::get<Survival>(smp.outcome).time;
      const double c = -std::log(uniform_open(rng)) / rate;
      smp.outcome = Survival{std::min(y, c), y <= c};
    }
    smp.covariates = std::move(d.x);
    truth.tau.push_back(d.tau);
    truth.mu.push_back(d.mu);
    truth.pi.push_back(d.pi);
    samples.push_back(std::move(smp));
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < spec.p; ++j) names.push_back(fmt::format("x{}", j + 1));
  return {Dataset::create(std::move(samples), std::move(names)), std::move(truth)};
}

std::string truth_to_csv(const GroundTruth& truth) {
  std::string out = "tau_true,mu_true,pi_true\n";
  for (std::size_t i = 0; i < truth.tau.size(); ++i)
    out += fmt::format("{:.17g},{:.17g},{:.17g}\n", truth.tau[i], truth.mu[i], truth.pi[i]);
  return out;
}

}  // namespace hte
