#include "hte/mob_forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hte/errors.hpp"
#include "hte/parallel.hpp"
#include "hte/rng.hpp"

namespace hte {

namespace {
constexpr int kForestFormatVersion = 1;
}

void ForestConfig::validate(const ModelFamily& family) const {
  if (n_trees < 1) throw ArgumentError("n_trees must be at least 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ArgumentError("subsample_fraction must lie in (0, 1]");
  tree.validate(family.num_free_parameters());
}

std::vector<std::size_t> draw_subsample(std::size_t n, double fraction, std::uint64_t seed,
                                        std::size_t b) {
  const auto m = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, {b, 0}));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Forest fit_forest(const Dataset& data, const ModelFamily& family, const CenteredDesign& design,
                  const ForestConfig& cfg) {
  cfg.validate(family);
  if (design.size() != data.n()) throw ValidationError("design length differs from data");
  design.validate();

  Forest f;
  f.family_ = family;
  f.design_ = design;
  f.config_ = cfg;
  f.n_train_ = data.n();
  std::vector<double> ones(data.n(), 1.0);
  f.root_fit_ = fit_node(family, data, ones, design, cfg.tree.newton);

  f.trees_.resize(cfg.n_trees);
  f.subsamples_.resize(cfg.n_trees);
  parallel_for(cfg.n_trees, cfg.workers, [&](std::size_t b) {
    f.subsamples_[b] = draw_subsample(data.n(), cfg.subsample_fraction, cfg.rng_seed, b);
    TreeConfig tc = cfg.tree;
    tc.rng_seed = derive_seed(cfg.rng_seed, {b, 1});
    try {
      f.trees_[b] = grow_tree(data, family, design, tc, f.subsamples_[b]);
    } catch (const Error& e) {
      throw Error(fmt::format("tree {}: {}", b, e.what()));
    }
  });
  return f;
}

std::vector<double> query_weights(const Forest& forest, std::span<const double> x,
                                  std::optional<std::size_t> exclude_row) {
  std::vector<double> w(forest.n_train(), 0.0);
  for (const Tree& t : forest.trees()) {
    const auto& members = t.nodes()[static_cast<std::size_t>(t.leaf_of(x))].members;
    if (members.empty()) continue;
    const double share = 1.0 / static_cast<double>(members.size());
    for (std::size_t i : members) w[i] += share;
  }
  if (exclude_row && *exclude_row < w.size()) w[*exclude_row] = 0.0;
  // Sum in index order so the normalization does not depend on tree order.
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (total > 0.0)
    for (double& v : w) v /= total;
  return w;
}

EffectEstimate predict_effect(const Forest& forest, const Dataset& data, std::span<const double> x,
                              std::optional<std::size_t> exclude_row) {
  if (data.n() != forest.n_train())
    throw ArgumentError("prediction needs the training data of the forest");
  if (x.size() != data.p()) throw ArgumentError("query has the wrong number of covariates");
  const std::vector<double> w = query_weights(forest, x, exclude_row);
  std::vector<std::size_t> rows;
  std::vector<double> weights;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) {
      rows.push_back(i);
      weights.push_back(w[i]);
    }
  }
  EffectEstimate e;
  try {
    if (rows.empty()) throw RankDeficiencyError("no training rows share a leaf with the query");
    e.params = fit_rows(forest.family(), data, forest.design(), rows, weights,
                        forest.config().tree.newton);
  } catch (const Error&) {
    e.params = forest.root_fit();
    e.params.fallback = true;
    e.fallback = true;
  }
  e.mu = e.params.mu;
  e.tau = e.params.tau;
  return e;
}

std::vector<EffectEstimate> predict_effects(const Forest& forest, const Dataset& data,
                                            const Dataset& queries, int workers) {
  std::vector<EffectEstimate> out(queries.n());
  parallel_for(queries.n(), workers, [&](std::size_t q) {
    out[q] = predict_effect(forest, data, queries[q].covariates);
  });
  return out;
}

nlohmann::json forest_to_json(const Forest& forest) {
  const auto& c = forest.config();
  nlohmann::json trees = nlohmann::json::array();
  for (std::size_t b = 0; b < forest.trees().size(); ++b)
    trees.push_back({{"subsample", forest.subsamples()[b]},
                     {"tree", tree_to_json(forest.trees()[b])}});
  return {
      {"format", "hteforest-forest"},
      {"version", kForestFormatVersion},
      {"family", forest.family().name()},
      {"num_levels", forest.family().num_levels},
      {"config",
       {{"n_trees", c.n_trees},
        {"subsample_fraction", c.subsample_fraction},
        {"rng_seed", c.rng_seed},
        {"min_node_size", c.tree.min_node_size},
        {"mtry", c.tree.mtry},
        {"alpha", c.tree.alpha},
        {"max_depth", c.tree.max_depth}}},
      {"design",
       {{"variant", to_string(forest.design().variant)},
        {"treatment_regressor", forest.design().treatment_regressor},
        {"offset", forest.design().offset}}},
      {"n_train", forest.n_train()},
      {"root_fit", params_to_json(forest.root_fit())},
      {"trees", std::move(trees)},
  };
}

Forest forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "hteforest-forest") throw ParseError("not a forest file");
    if (j.at("version").get<int>() != kForestFormatVersion)
      throw ParseError(fmt::format("unsupported forest format version {}", j.at("version").dump()));
    Forest f;
    f.family_ = ModelFamily::from_string(j.at("family").get<std::string>(),
                                         j.at("num_levels").get<int>());
    const auto& c = j.at("config");
    f.config_.n_trees = c.at("n_trees").get<std::size_t>();
    f.config_.subsample_fraction = c.at("subsample_fraction").get<double>();
    f.config_.rng_seed = c.at("rng_seed").get<std::uint64_t>();
    f.config_.tree.min_node_size = c.at("min_node_size").get<std::size_t>();
    f.config_.tree.mtry = c.at("mtry").get<std::size_t>();
    f.config_.tree.alpha = c.at("alpha").get<double>();
    f.config_.tree.max_depth = c.at("max_depth").get<int>();
    const auto& d = j.at("design");
    f.design_.variant = variant_from_string(d.at("variant").get<std::string>());
    f.design_.treatment_regressor = d.at("treatment_regressor").get<std::vector<double>>();
    f.design_.offset = d.at("offset").get<std::vector<double>>();
    f.n_train_ = j.at("n_train").get<std::size_t>();
    f.root_fit_ = params_from_json(j.at("root_fit"));
    for (const auto& t : j.at("trees")) {
      f.subsamples_.push_back(t.at("subsample").get<std::vector<std::size_t>>());
      f.trees_.push_back(tree_from_json(t.at("tree")));
    }
    if (f.design_.size() != f.n_train_) throw ParseError("design length differs from n_train");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("forest file: ") + e.what());
  }
}

void save_forest(const Forest& forest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << forest_to_json(forest).dump() << "\n";
}

Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("forest file: ") + e.what());
  }
  return forest_from_json(j);
}

}  // namespace hte
