#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hte/base_models.hpp"
#include "hte/data.hpp"

namespace hte {

struct TreeConfig {
  std::size_t min_node_size = 14;
  std::size_t mtry = 0;  // 0 means P
  double alpha = 1.0;    // Bonferroni-adjusted p-value threshold; 1 disables stopping
  int max_depth = -1;    // < 0 means unlimited
  std::uint64_t rng_seed = 0;
  NewtonOptions newton;

  // Throws ArgumentError. n_free is the number of free node parameters.
  void validate(std::size_t n_free) const;
};

struct TreeNode {
  int id = 0;
  int depth = 0;
  bool is_leaf = true;
  // Internal nodes: members with x[var] <= cutpoint go left.
  std::size_t var = 0;
  double cutpoint = 0.0;
  int left = -1;
  int right = -1;
  double p_value = 1.0;
  ModelParams params;
  std::vector<std::size_t> members;  // row indices into the training data
};

class Tree {
 public:
  Tree() = default;
  explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& root() const { return nodes_.front(); }
  std::size_t num_leaves() const;
  int depth() const;
  // Index of the leaf that x falls into.
  int leaf_of(std::span<const double> x) const;
  int leaf_of(const Dataset& data, std::size_t row) const;

 private:
  std::vector<TreeNode> nodes_;
};

struct VariableSelection {
  std::size_t var = 0;
  double p_value = 1.0;           // unadjusted
  double adjusted_p_value = 1.0;  // Bonferroni over the tested candidates
  double statistic = 0.0;
};

// Picks the candidate whose midrank-transformed values are most associated
// with the scores (asymptotic chi-squared test of the linear statistic).
// rows are the node members, in the same order as the score rows. Constant
// candidates are skipped; returns nothing when all are skipped or the
// smallest adjusted p-value exceeds alpha.
std::optional<VariableSelection> select_split_variable(const ScoreMatrix& scores,
                                                       const Dataset& data,
                                                       std::span<const std::size_t> rows,
                                                       std::span<const std::size_t> candidates,
                                                       double alpha = 1.0);

// Cutpoint c on x (one value per score row) maximizing the standardized
// two-sample statistic of the left-hand score sum, with at least
// min_node_size observations on each side. The returned c is an observed
// value; the split rule is x <= c. Ties go to the smaller cutpoint.
std::optional<double> select_cutpoint(const ScoreMatrix& scores, std::span<const double> x,
                                      std::size_t min_node_size);

// Grows one tree on the given subsample. Throws if the root model cannot be
// fitted; child fits that fail inherit the parent parameters (flagged) and
// become leaves.
Tree grow_tree(const Dataset& data, const ModelFamily& family, const CenteredDesign& design,
               const TreeConfig& cfg, std::span<const std::size_t> subsample);

nlohmann::json params_to_json(const ModelParams& p);
ModelParams params_from_json(const nlohmann::json& j);
nlohmann::json tree_to_json(const Tree& tree, bool include_members = true);
Tree tree_from_json(const nlohmann::json& j);

}  // namespace hte
