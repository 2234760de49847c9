#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hte/data.hpp"

namespace hte {

enum class FamilyKind { LinearGaussian, BinomialLogit, ProportionalOdds, WeibullPH, CoxPartial };

// Likelihood family of the node model. Transformation families (proportional
// odds, Weibull, Cox) follow P(Y <= y | x, w) = F(h(y) - eta) and fix mu = 0.
struct ModelFamily {
  FamilyKind kind = FamilyKind::LinearGaussian;
  int num_levels = 0;  // K, proportional odds only

  static ModelFamily linear_gaussian() { return {FamilyKind::LinearGaussian, 0}; }
  static ModelFamily binomial_logit() { return {FamilyKind::BinomialLogit, 0}; }
  static ModelFamily proportional_odds(int k);
  static ModelFamily weibull_ph() { return {FamilyKind::WeibullPH, 0}; }
  static ModelFamily cox_partial() { return {FamilyKind::CoxPartial, 0}; }

  // Accepts "gaussian"/"normal", "binomial"/"logit", "ordinal"/"po", "weibull",
  // "cox". num_levels is used for proportional odds.
  static ModelFamily from_string(const std::string& name, int num_levels = 0);

  std::string name() const;
  // mu is a free parameter (GLM families) rather than fixed at zero.
  bool has_intercept() const;
  bool accepts(OutcomeKind kind) const;
  // Inverse link F: identity, expit, logistic CDF, minimum extreme value CDF.
  double inverse_link(double z) const;
  // d gamma / d eta for canonical exponential families, i.e. the variance
  // function; empty for transformation families.
  std::optional<double> canonical_variance(double eta) const;

  // Number of parameters estimated per node (mu, tau, phi, thresholds, nu).
  std::size_t num_free_parameters() const;

  bool operator==(const ModelFamily&) const = default;
};

struct ModelParams {
  double mu = 0.0;
  double tau = 0.0;
  double phi = 1.0;           // Gaussian standard deviation
  std::vector<double> theta;  // proportional-odds thresholds, strictly increasing
  double nu1 = 0.0;           // Weibull h(y) = nu1 + nu2 log y
  double nu2 = 1.0;

  // Diagnostics from fitting.
  bool capped = false;    // a parameter hit its cap (separation / monotone likelihood)
  bool fallback = false;  // params inherited from a parent or root fit
  int iterations = 0;
  double gradient_norm = 0.0;
};

// Per-observation score: column 0 is d loglik_i / d mu, column 1 is
// d loglik_i / d tau (the log-likelihood gradient, i.e. minus the gradient of
// the negative log-likelihood).
using ScoreMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct NewtonOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;  // on the weight-normalized gradient
  double effect_cap = 15.0;          // |mu|, |tau|
  // When set, receives the objective after every accepted iteration
  // (Gaussian: at phi = 1, before phi is profiled out).
  std::vector<double>* trace = nullptr;
};

// Weighted maximum likelihood for one node. Rows with zero weight are ignored.
// Throws RankDeficiencyError, ConvergenceError, ValidationError.
ModelParams fit_node(const ModelFamily& family, const Dataset& data, std::span<const double> weights,
                     const CenteredDesign& design, const NewtonOptions& options = {});

// Same as fit_node restricted to `rows`, with weights[k] belonging to rows[k];
// empty weights means unit weights.
ModelParams fit_rows(const ModelFamily& family, const Dataset& data, const CenteredDesign& design,
                     std::span<const std::size_t> rows, std::span<const double> weights = {},
                     const NewtonOptions& options = {});

// Weighted negative log-likelihood (negative log partial likelihood with
// Breslow ties for Cox). Throws EvaluationError for non-positive mass.
double neg_log_lik(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                   std::span<const double> weights, const CenteredDesign& design);

double neg_log_lik_rows(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                        const CenteredDesign& design, std::span<const std::size_t> rows,
                        std::span<const double> weights = {});

ScoreMatrix score(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                  const CenteredDesign& design);

ScoreMatrix score_rows(const ModelFamily& family, const ModelParams& params, const Dataset& data,
                       const CenteredDesign& design, std::span<const std::size_t> rows);

// Loss of one observation at linear predictor eta and its first two
// derivatives in eta. Separable families only (not CoxPartial); the non-effect
// parameters (phi, theta, nu) are taken from params.
struct EtaLoss {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};
EtaLoss observation_eta_loss(const ModelFamily& family, const ModelParams& params,
                             const OutcomeValue& y, double eta);

// Difference in natural parameters eta1(x) - eta0(x).
inline double dina(const ModelFamily&, double eta0, double eta1) { return eta1 - eta0; }

// Category probabilities P(Y = k), k = 1..K, under thresholds theta and shift eta.
std::vector<double> ordinal_probabilities(std::span<const double> theta, double eta);

// Numerically guarded building blocks shared with boosting.
double expit(double z);
double logit(double p);
// log(1 + exp(z))
double softplus(double z);

}  // namespace hte
