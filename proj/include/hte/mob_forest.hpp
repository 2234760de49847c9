#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hte/base_models.hpp"
#include "hte/data.hpp"
#include "hte/mob_tree.hpp"

namespace hte {

struct ForestConfig {
  std::size_t n_trees = 500;
  double subsample_fraction = 0.5;
  TreeConfig tree;
  std::uint64_t rng_seed = 0;
  int workers = 1;  // threads used for growing trees

  void validate(const ModelFamily& family) const;
};

class Forest {
 public:
  Forest() = default;

  const ModelFamily& family() const { return family_; }
  const CenteredDesign& design() const { return design_; }
  const ForestConfig& config() const { return config_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const std::vector<std::vector<std::size_t>>& subsamples() const { return subsamples_; }
  // Fit on all training rows with unit weights; used when a local fit fails.
  const ModelParams& root_fit() const { return root_fit_; }
  std::size_t n_train() const { return n_train_; }

 private:
  friend Forest fit_forest(const Dataset&, const ModelFamily&, const CenteredDesign&,
                           const ForestConfig&);
  friend Forest forest_from_json(const nlohmann::json&);

  ModelFamily family_;
  CenteredDesign design_;
  ForestConfig config_;
  std::vector<Tree> trees_;
  std::vector<std::vector<std::size_t>> subsamples_;
  ModelParams root_fit_;
  std::size_t n_train_ = 0;
};

// Per-tree subsample (sorted row indices) for tree b.
std::vector<std::size_t> draw_subsample(std::size_t n, double fraction, std::uint64_t seed,
                                        std::size_t b);

// Grows cfg.n_trees trees on independent subsamples. The result does not
// depend on cfg.workers. Tree failures are rethrown naming the tree.
Forest fit_forest(const Dataset& data, const ModelFamily& family, const CenteredDesign& design,
                  const ForestConfig& cfg);

// Kernel weights alpha_i(x), summing to one. When exclude_row is set that
// training row gets weight zero before renormalization.
std::vector<double> query_weights(const Forest& forest, std::span<const double> x,
                                  std::optional<std::size_t> exclude_row = std::nullopt);

struct EffectEstimate {
  double mu = 0.0;
  double tau = 0.0;
  ModelParams params;
  bool fallback = false;  // local fit failed; root fit returned
};

// Local maximum likelihood at x with the forest weights. data must be the
// training data the forest was fitted on.
EffectEstimate predict_effect(const Forest& forest, const Dataset& data, std::span<const double> x,
                              std::optional<std::size_t> exclude_row = std::nullopt);

// Predictions for every row of `queries` (covariates only are used).
std::vector<EffectEstimate> predict_effects(const Forest& forest, const Dataset& data,
                                            const Dataset& queries, int workers = 1);

nlohmann::json forest_to_json(const Forest& forest);
Forest forest_from_json(const nlohmann::json& j);
void save_forest(const Forest& forest, const std::filesystem::path& path);
Forest load_forest(const std::filesystem::path& path);

}  // namespace hte
