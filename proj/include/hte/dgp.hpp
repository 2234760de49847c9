#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hte/base_models.hpp"
#include "hte/data.hpp"
#include "hte/rng.hpp"

namespace hte {

enum class Setup { A, B, C, D, WA };

// Setups A-D, or one of the 16 additive-predictor rows of the Wager-Athey
// design (rows 1-8 code the treatment as w, rows 9-16 as w - 0.5).
struct Scenario {
  Setup setup = Setup::A;
  int wa_row = 0;

  // "A".."D", "WA1".."WA16".
  static Scenario parse(const std::string& name);
  std::string name() const;
  // Offset subtracted from w in the outcome model: 0.5 or 0.
  double treatment_shift() const;
  bool uniform_covariates() const;
  std::size_t min_covariates() const;

  bool operator==(const Scenario&) const = default;
};

enum class OutcomeFamily { Normal, Binomial, Multinomial4, Weibull };

std::string to_string(OutcomeFamily f);
OutcomeFamily outcome_family_from_string(const std::string& name);
// Likelihood family matching the generated outcome.
ModelFamily default_fit_family(OutcomeFamily f);

struct DgpSpec {
  Scenario scenario;
  OutcomeFamily outcome = OutcomeFamily::Normal;
  std::optional<ModelFamily> fit_family_override;  // e.g. Cox on Weibull data
  std::size_t n = 800;
  std::size_t p = 10;
  std::uint64_t seed = 0;
  // Weibull only: target marginal censoring fraction; 0 disables censoring.
  double censoring = 0.5;

  ModelFamily fit_family() const;
  void validate() const;
};

struct GroundTruth {
  std::vector<double> tau;
  std::vector<double> mu;
  std::vector<double> pi;
};

double propensity(const Scenario& s, std::span<const double> x);
double tau_fn(const Scenario& s, std::span<const double> x);
double mu_fn(const Scenario& s, std::span<const double> x);

// Beta(2, 4) density.
double beta24_density(double x);

// Rate of the exponential censoring law giving the target marginal censoring
// fraction for this scenario and dimension (bisection on a 50000-draw
// pre-sample; cached).
double censoring_rate(const Scenario& s, std::size_t p, double target);

// One outcome at linear predictor eta; Weibull times are uncensored.
OutcomeValue draw_outcome(OutcomeFamily family, double eta, Rng& rng);

std::pair<Dataset, GroundTruth> sample(const DgpSpec& spec);

std::string truth_to_csv(const GroundTruth& truth);

}  // namespace hte
