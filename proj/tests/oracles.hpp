#pragma once

// Independent reference computations used only by the tests.

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "hte/base_models.hpp"
#include "hte/data.hpp"
#include "hte/rng.hpp"

namespace oracle {

// Weighted least squares of y on (1, t) by Cramer's rule on the 2x2 normal
// equations. Returns (intercept, slope).
std::pair<double, double> weighted_normal_equations(std::span<const double> y,
                                                    std::span<const double> t,
                                                    std::span<const double> w);

double central_difference(const std::function<double(double)>& f, double x, double h = 1e-6);

// Relative error with a floor on the denominator.
double rel_err(double a, double b, double floor = 1e-3);

// Two-sided one-sample Kolmogorov-Smirnov test against U(0, 1).
double ks_statistic_uniform(std::vector<double> u);
double ks_pvalue_uniform(std::vector<double> u);

// Pearson chi-squared goodness-of-fit p-value against equal cell probabilities.
double chisq_uniform_pvalue(std::span<const std::size_t> counts);

// Small random dataset appropriate for the family, with covariate x1 ~ N(0,1),
// randomized treatment and outcome drawn from the family with moderate effects.
hte::Dataset random_family_data(const hte::ModelFamily& family, std::size_t n, hte::Rng& rng);

// Random valid parameters for the family.
hte::ModelParams random_params(const hte::ModelFamily& family, hte::Rng& rng);

// Random design with offsets and a centered treatment regressor.
hte::CenteredDesign random_design(const hte::Dataset& data, hte::Rng& rng);

}  // namespace oracle

namespace oracle {

// Noiseless step effect: x_j ~ U(0,1), fair-coin treatment, y = 1[x1 > 0.5] * w
// plus optional Gaussian noise.
hte::Dataset step_data(std::size_t n, std::size_t p, hte::Rng& rng, double noise = 0.0);

// Dataset of n rows with p U(0,1) covariates and a Gaussian outcome unrelated
// to anything; useful when only the covariates matter.
hte::Dataset noise_data(std::size_t n, std::size_t p, hte::Rng& rng);

}  // namespace oracle
