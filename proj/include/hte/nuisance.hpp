#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hte/base_models.hpp"
#include "hte/data.hpp"
#include "hte/regression_tree.hpp"

namespace hte {

struct PropensityConfig {
  std::size_t n_trees = 125;
  std::size_t min_node_size = 5;
  double subsample_fraction = 0.5;
  std::size_t mtry = 0;  // 0 means P
  double clip = 0.01;
  // Honest trees: half of each subsample places the splits, the other half
  // sets the leaf means.
  bool honesty = true;
  std::uint64_t rng_seed = 0;
  int workers = 1;
};

struct BoostConfig {
  int n_rounds = 100;
  double learning_rate = 0.1;
  int max_tree_depth = 2;
  std::size_t min_leaf = 10;
  // L2 penalty added to the leaf Hessian sum of every Newton step.
  double leaf_l2 = 0.0;
  // Share of the rows drawn (without replacement) to grow each round's tree;
  // 1 disables stochastic boosting.
  double bag_fraction = 0.5;
  // Keep only the rounds up to the best cumulative out-of-bag improvement
  // (needs bag_fraction < 1).
  bool oob_stopping = true;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Per-sample first-stage estimates. Optional members are empty vectors when
// absent.
struct NuisanceProfile {
  std::vector<double> pi;
  std::vector<double> eta0;
  std::vector<double> eta1;
  std::vector<double> m;
  std::vector<double> a;
  std::vector<double> nu;
  std::vector<std::array<double, 2>> uncensored_prob;  // P(C >= Y | x, W = w), w = 0, 1
  std::vector<std::string> warnings;

  std::size_t size() const { return pi.size(); }
  bool has_gao() const { return !a.empty(); }
};

// Boosted additive predictor: eta(x) = init + sum of tree predictions.
struct BoostModel {
  double init = 0.0;
  std::vector<RegressionTree> trees;
  std::vector<double> loss_trace;  // training loss before round 1 and after every kept round

  double predict(std::span<const double> x) const;
};

// Regression forest on W with out-of-bag predictions, clipped to
// [clip, 1 - clip]. Rows never out of bag get the all-tree average.
std::vector<double> estimate_propensity(const Dataset& data, const PropensityConfig& cfg);

// Boosting with the family's loss on `rows` only. `fixed` supplies phi,
// thresholds or nu for the transformation families; `init` overrides the
// starting constant. Returns the model and appends warnings.
BoostModel boost(const Dataset& data, const ModelFamily& family, std::span<const std::size_t> rows,
                 const BoostConfig& cfg, const ModelParams& fixed = {},
                 std::optional<double> init = std::nullopt,
                 std::vector<std::string>* warnings = nullptr);

// Gradient of the boosting loss in each F[k] (F[k] belongs to rows[k]). For
// Cox this is the martingale residual under hazard exp(-eta).
std::vector<double> boost_gradient(const Dataset& data, const ModelFamily& family,
                                   std::span<const std::size_t> rows, std::span<const double> f,
                                   const ModelParams& fixed = {});

struct ArmPredictions {
  std::vector<double> eta0;
  std::vector<double> eta1;
  std::vector<std::string> warnings;
};

// T-learner: one boosting machine per arm, evaluated for every sample.
ArmPredictions estimate_arm_predictors(const Dataset& data, const ModelFamily& family,
                                       const BoostConfig& cfg);

// m = pi * eta1 + (1 - pi) * eta0.
std::vector<double> compute_offsets(std::span<const double> pi, std::span<const double> eta0,
                                    std::span<const double> eta1);

// Variance-weighted propensity a(x), clipped to [clip, 1 - clip]. Supported
// for Gaussian, binomial and Cox; Cox needs the uncensored probabilities.
std::vector<double> compute_gao_weights(std::span<const double> pi, std::span<const double> eta0,
                                        std::span<const double> eta1, const ModelFamily& family,
                                        std::span<const std::array<double, 2>> uncensored_prob = {},
                                        double clip = 0.01);

// Per-arm binomial boosting of the event indicator, evaluated under both arms.
std::vector<std::array<double, 2>> estimate_uncensored_prob(const Dataset& data,
                                                            const BoostConfig& cfg,
                                                            std::vector<std::string>* warnings = nullptr);

struct NuisanceConfig {
  PropensityConfig propensity;
  BoostConfig boost;
  bool gao = true;  // estimate a and nu when the family supports them
  // Gaussian only: m(x) from one pooled regression instead of the arm composition.
  bool direct_gaussian_m = false;
};

NuisanceProfile estimate_nuisance(const Dataset& data, const ModelFamily& family,
                                  const NuisanceConfig& cfg);

// Treatment regressor and offset for the variant. Naive ignores the profile.
// Throws UnsupportedVariantError for Gao variants without a(x).
CenteredDesign build_design(Variant variant, const Dataset& data,
                            const NuisanceProfile* profile = nullptr);

std::string profile_to_csv(const NuisanceProfile& profile);
void write_profile_csv(const NuisanceProfile& profile, const std::filesystem::path& path);

}  // namespace hte
