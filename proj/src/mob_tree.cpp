#include "hte/mob_tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hte/errors.hpp"
#include "hte/rng.hpp"

namespace hte {

namespace {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Moore-Penrose inverse of a symmetric 2x2 covariance, with its rank.
struct PseudoInverse {
  Mat2 inverse = Mat2::Zero();
  int rank = 0;
};

PseudoInverse pinv(const Mat2& v) {
  PseudoInverse out;
  Eigen::SelfAdjointEigenSolver<Mat2> es(v);
  const Vec2 lambda = es.eigenvalues();
  const double top = std::max(std::abs(lambda(0)), std::abs(lambda(1)));
  if (!(top > 0.0)) return out;
  for (int k = 0; k < 2; ++k) {
    if (lambda(k) > 1e-10 * top) {
      const Vec2 e = es.eigenvectors().col(k);
      out.inverse += e * e.transpose() / lambda(k);
      ++out.rank;
    }
  }
  return out;
}

std::vector<double> midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = rank;
    i = j + 1;
  }
  return r;
}

struct ScoreMoments {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();  // divisor n
};

ScoreMoments moments(const ScoreMatrix& s) {
  ScoreMoments m;
  const auto n = static_cast<double>(s.rows());
  m.mean = s.colwise().sum().transpose() / n;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Vec2 d = s.row(i).transpose() - m.mean;
    m.cov += d * d.transpose();
  }
  m.cov /= n;
  return m;
}

}  // namespace

void TreeConfig::validate(std::size_t n_free) const {
  if (min_node_size < 2 * n_free)
    throw ArgumentError(fmt::format("min_node_size = {} must be at least {} (twice the free parameters)",
                                    min_node_size, 2 * n_free));
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
}

std::size_t Tree::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf; }));
}

int Tree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

int Tree::leaf_of(std::span<const double> x) const {
  int k = 0;
  while (!nodes_[k].is_leaf) k = x[nodes_[k].var] <= nodes_[k].cutpoint ? nodes_[k].left : nodes_[k].right;
  return k;
}

int Tree::leaf_of(const Dataset& data, std::size_t row) const {
  return leaf_of(data[row].covariates);
}

std::optional<VariableSelection> select_split_variable(const ScoreMatrix& scores,
                                                       const Dataset& data,
                                                       std::span<const std::size_t> rows,
                                                       std::span<const std::size_t> candidates,
                                                       double alpha) {
  const std::size_t n = rows.size();
  if (static_cast<std::size_t>(scores.rows()) != n)
    throw ArgumentError("score rows and node members differ in length");
  if (n < 2) return std::nullopt;
  const ScoreMoments sm = moments(scores);
  const double nd = static_cast<double>(n);

  std::optional<VariableSelection> best;
  std::size_t tested = 0;
  std::vector<double> x(n);
  for (std::size_t j : candidates) {
    for (std::size_t k = 0; k < n; ++k) x[k] = data.x(rows[k], j);
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) continue;
    const std::vector<double> g = midranks(x);
    double sg = 0.0, sg2 = 0.0;
    Vec2 t = Vec2::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      sg += g[k];
      sg2 += g[k] * g[k];
      t += g[k] * scores.row(static_cast<Eigen::Index>(k)).transpose();
    }
    const Vec2 expectation = sg * sm.mean;
    const Mat2 cov = sm.cov * (nd / (nd - 1.0) * sg2 - sg * sg / (nd - 1.0));
    const PseudoInverse pi = pinv(cov);
    if (pi.rank == 0) continue;
    ++tested;
    const Vec2 d = t - expectation;
    const double stat = std::max(0.0, d.dot(pi.inverse * d));
    const boost::math::chi_squared chi(pi.rank);
    const double p = boost::math::cdf(boost::math::complement(chi, stat));
    // Underflowed p-values are ranked by the statistic per degree of freedom.
    const bool better = !best || p < best->p_value ||
                        (p == best->p_value && stat / pi.rank > best->statistic);
    if (better) best = VariableSelection{j, p, p, stat / pi.rank};
  }
  if (!best) return std::nullopt;
  best->adjusted_p_value = std::min(1.0, best->p_value * static_cast<double>(tested));
  if (best->adjusted_p_value > alpha) return std::nullopt;
  return best;
}

std::optional<double> select_cutpoint(const ScoreMatrix& scores, std::span<const double> x,
                                      std::size_t min_node_size) {
  const std::size_t n = x.size();
  if (static_cast<std::size_t>(scores.rows()) != n)
    throw ArgumentError("score rows and covariate values differ in length");
  const std::size_t min_side = std::max<std::size_t>(min_node_size, 1);
  if (n < 2 * min_side) return std::nullopt;
  const ScoreMoments sm = moments(scores);
  const PseudoInverse pi = pinv(sm.cov);
  if (pi.rank == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  const double nd = static_cast<double>(n);
  Vec2 left = Vec2::Zero();
  std::optional<double> cut;
  double best = -1.0;
  for (std::size_t k = 1; k < n; ++k) {
    left += scores.row(static_cast<Eigen::Index>(order[k - 1])).transpose();
    if (k < min_side) continue;
    if (n - k < min_side) break;
    if (!(x[order[k - 1]] < x[order[k]])) continue;
    const double nl = static_cast<double>(k);
    const Vec2 d = left - nl * sm.mean;
    const double stat = d.dot(pi.inverse * d) * (nd - 1.0) / (nl * (nd - nl));
    if (stat > best + 1e-10 * std::abs(best)) {
      best = stat;
      cut = x[order[k - 1]];
    }
  }
  return cut;
}

namespace {

class Grower {
 public:
  Grower(const Dataset& data, const ModelFamily& family, const CenteredDesign& design,
         const TreeConfig& cfg)
      : data_(data), family_(family), design_(design), cfg_(cfg), rng_(cfg.rng_seed) {}

  std::vector<TreeNode> run(std::span<const std::size_t> subsample) {
    TreeNode root;
    root.members.assign(subsample.begin(), subsample.end());
    root.params = fit_rows(family_, data_, design_, root.members, {}, cfg_.newton);
    nodes_.push_back(std::move(root));
    grow(0);
    return std::move(nodes_);
  }

 private:
  std::vector<std::size_t> draw_candidates() {
    const std::size_t p = data_.p();
    const std::size_t m = cfg_.mtry == 0 ? p : std::min(cfg_.mtry, p);
    std::vector<std::size_t> all(p);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_() % (p - i));
      std::swap(all[i], all[j]);
    }
    all.resize(m);
    std::sort(all.begin(), all.end());
    return all;
  }

  ModelParams fit_child(const std::vector<std::size_t>& rows, const ModelParams& parent) {
    try {
      return fit_rows(family_, data_, design_, rows, {}, cfg_.newton);
    } catch (const Error&) {
      ModelParams p = parent;
      p.fallback = true;
      return p;
    }
  }

  void grow(std::size_t idx) {
    if (nodes_[idx].params.fallback) return;
    const std::size_t n = nodes_[idx].members.size();
    if (n < 2 * cfg_.min_node_size) return;
    if (cfg_.max_depth >= 0 && nodes_[idx].depth >= cfg_.max_depth) return;

    const std::vector<std::size_t> members = nodes_[idx].members;
    ScoreMatrix s;
    try {
      s = score_rows(family_, nodes_[idx].params, data_, design_, members);
    } catch (const Error&) {
      return;
    }
    const auto candidates = draw_candidates();
    const auto sel = select_split_variable(s, data_, members, candidates, cfg_.alpha);
    if (!sel) return;
    std::vector<double> x(n);
    for (std::size_t k = 0; k < n; ++k) x[k] = data_.x(members[k], sel->var);
    const auto cut = select_cutpoint(s, x, cfg_.min_node_size);
    if (!cut) return;

    std::vector<std::size_t> left, right;
    for (std::size_t k = 0; k < n; ++k) (x[k] <= *cut ? left : right).push_back(members[k]);
    const ModelParams parent = nodes_[idx].params;
    const int depth = nodes_[idx].depth + 1;

    TreeNode l, r;
    l.id = static_cast<int>(nodes_.size());
    r.id = l.id + 1;
    l.depth = r.depth = depth;
    l.params = fit_child(left, parent);
    r.params = fit_child(right, parent);
    l.members = std::move(left);
    r.members = std::move(right);

    TreeNode& node = nodes_[idx];
    node.is_leaf = false;
    node.var = sel->var;
    node.cutpoint = *cut;
    node.p_value = sel->p_value;
    node.left = l.id;
    node.right = r.id;
    node.members.clear();
    node.members.shrink_to_fit();
    nodes_.push_back(std::move(l));
    nodes_.push_back(std::move(r));
    const auto li = static_cast<std::size_t>(nodes_[idx].left);
    const auto ri = static_cast<std::size_t>(nodes_[idx].right);
    grow(li);
    grow(ri);
  }

  const Dataset& data_;
  const ModelFamily& family_;
  const CenteredDesign& design_;
  const TreeConfig& cfg_;
  Rng rng_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

Tree grow_tree(const Dataset& data, const ModelFamily& family, const CenteredDesign& design,
               const TreeConfig& cfg, std::span<const std::size_t> subsample) {
  cfg.validate(family.num_free_parameters());
  if (subsample.empty()) throw ArgumentError("empty subsample");
  for (std::size_t i : subsample)
    if (i >= data.n()) throw ArgumentError("subsample index out of range");
  return Tree(Grower(data, family, design, cfg).run(subsample));
}

nlohmann::json params_to_json(const ModelParams& p) {
  return {{"mu", p.mu},         {"tau", p.tau},     {"phi", p.phi},
          {"theta", p.theta},   {"nu1", p.nu1},     {"nu2", p.nu2},
          {"capped", p.capped}, {"fallback", p.fallback}};
}

ModelParams params_from_json(const nlohmann::json& j) {
  ModelParams p;
  p.mu = j.at("mu").get<double>();
  p.tau = j.at("tau").get<double>();
  p.phi = j.at("phi").get<double>();
  p.theta = j.at("theta").get<std::vector<double>>();
  p.nu1 = j.at("nu1").get<double>();
  p.nu2 = j.at("nu2").get<double>();
  p.capped = j.at("capped").get<bool>();
  p.fallback = j.at("fallback").get<bool>();
  return p;
}

nlohmann::json tree_to_json(const Tree& tree, bool include_members) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes()) {
    nlohmann::json j = {{"id", n.id}, {"depth", n.depth}, {"params", params_to_json(n.params)}};
    if (n.is_leaf) {
      if (include_members) j["members"] = n.members;
    } else {
      j["var"] = n.var;
      j["cutpoint"] = n.cutpoint;
      j["p_value"] = n.p_value;
      j["left"] = n.left;
      j["right"] = n.right;
    }
    nodes.push_back(std::move(j));
  }
  return {{"nodes", std::move(nodes)}};
}

Tree tree_from_json(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& e : j.at("nodes")) {
    TreeNode n;
    n.id = e.at("id").get<int>();
    n.depth = e.at("depth").get<int>();
    n.params = params_from_json(e.at("params"));
    n.is_leaf = !e.contains("var");
    if (n.is_leaf) {
      if (e.contains("members")) n.members = e.at("members").get<std::vector<std::size_t>>();
    } else {
      n.var = e.at("var").get<std::size_t>();
      n.cutpoint = e.at("cutpoint").get<double>();
      n.p_value = e.at("p_value").get<double>();
      n.left = e.at("left").get<int>();
      n.right = e.at("right").get<int>();
    }
    if (n.id != static_cast<int>(nodes.size())) throw ParseError("tree node ids out of order");
    nodes.push_back(std::move(n));
  }
  if (nodes.empty()) throw ParseError("tree without nodes");
  return Tree(std::move(nodes));
}

}  // namespace hte
