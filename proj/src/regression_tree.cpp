#include "hte/regression_tree.hpp"

#include <algorithm>
#include <numeric>

#include "hte/errors.hpp"

namespace hte {

namespace {

struct Builder {
  const Dataset& data;
  const CartConfig& cfg;
  Rng& rng;
  std::vector<RegressionTree::Node> nodes;

  // items: (row, target) pairs of the node.
  int build(std::vector<std::pair<std::size_t, double>>& items, int depth) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    double sum = 0.0;
    for (const auto& it : items) sum += it.second;
    const double n = static_cast<double>(items.size());
    nodes[id].value = sum / n;
    if (items.size() < 2 * cfg.min_leaf) return id;
    if (cfg.max_depth >= 0 && depth >= cfg.max_depth) return id;

    const std::size_t p = data.p();
    std::vector<std::size_t> vars(p);
    std::iota(vars.begin(), vars.end(), 0);
    const std::size_t m = cfg.mtry == 0 ? p : std::min(cfg.mtry, p);
    if (m < p) {
      for (std::size_t i = 0; i < m; ++i)
        std::swap(vars[i], vars[i + static_cast<std::size_t>(rng() % (p - i))]);
      vars.resize(m);
      std::sort(vars.begin(), vars.end());
    }

    // Maximize S_L^2 / n_L + S_R^2 / n_R, the decrease in squared error.
    const double base = sum * sum / n;
    double best_gain = 1e-12 * std::max(1.0, std::abs(base));
    bool found = false;
    std::size_t best_var = 0;
    double best_cut = 0.0;
    std::vector<std::pair<double, double>> xs(items.size());
    for (std::size_t j : vars) {
      for (std::size_t k = 0; k < items.size(); ++k)
        xs[k] = {data.x(items[k].first, j), items[k].second};
      std::stable_sort(xs.begin(), xs.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      double left = 0.0;
      for (std::size_t k = 1; k < xs.size(); ++k) {
        left += xs[k - 1].second;
        if (k < cfg.min_leaf) continue;
        if (xs.size() - k < cfg.min_leaf) break;
        if (!(xs[k - 1].first < xs[k].first)) continue;
        const double nl = static_cast<double>(k), nr = n - nl;
        const double gain = left * left / nl + (sum - left) * (sum - left) / nr - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_var = j;
          best_cut = 0.5 * (xs[k - 1].first + xs[k].first);
          found = true;
        }
      }
    }
    if (!found) return id;

    std::vector<std::pair<std::size_t, double>> l, r;
    for (const auto& it : items) (data.x(it.first, best_var) <= best_cut ? l : r).push_back(it);
    items.clear();
    items.shrink_to_fit();
    nodes[id].is_leaf = false;
    nodes[id].var = best_var;
    nodes[id].cutpoint = best_cut;
    const int li = build(l, depth + 1);
    const int ri = build(r, depth + 1);
    nodes[id].left = li;
    nodes[id].right = ri;
    return id;
  }
};

}  // namespace

RegressionTree RegressionTree::fit(const Dataset& data, std::span<const std::size_t> rows,
                                   std::span<const double> target, const CartConfig& cfg,
                                   Rng& rng) {
  if (rows.empty()) throw ArgumentError("regression tree needs at least one row");
  if (rows.size() != target.size()) throw ArgumentError("rows and targets differ in length");
  if (cfg.min_leaf < 1) throw ArgumentError("min_leaf must be at least 1");
  std::vector<std::pair<std::size_t, double>> items(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) items[k] = {rows[k], target[k]};
  Builder b{data, cfg, rng, {}};
  b.build(items, 0);
  RegressionTree t;
  t.nodes_ = std::move(b.nodes);
  return t;
}

int RegressionTree::leaf_of(std::span<const double> x) const {
  int k = 0;
  while (!nodes_[k].is_leaf) k = x[nodes_[k].var] <= nodes_[k].cutpoint ? nodes_[k].left : nodes_[k].right;
  return k;
}

}  // namespace hte
