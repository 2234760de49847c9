#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hte/data.hpp"
#include "hte/rng.hpp"

namespace hte {

// Squared-error CART used by the propensity forest and the boosting machines.
struct CartConfig {
  int max_depth = -1;  // < 0 means unlimited
  std::size_t min_leaf = 5;
  std::size_t mtry = 0;  // 0 means P
};

class RegressionTree {
 public:
  struct Node {
    bool is_leaf = true;
    std::size_t var = 0;
    double cutpoint = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean target of the training rows in the node
  };

  // target[k] belongs to rows[k]. rng is only consumed when mtry < P.
  static RegressionTree fit(const Dataset& data, std::span<const std::size_t> rows,
                            std::span<const double> target, const CartConfig& cfg, Rng& rng);

  int leaf_of(std::span<const double> x) const;
  double predict(std::span<const double> x) const { return nodes_[leaf_of(x)].value; }
  void set_value(int node, double v) { nodes_[static_cast<std::size_t>(node)].value = v; }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

}  // namespace hte
