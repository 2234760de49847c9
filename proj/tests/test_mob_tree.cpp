#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "hte/errors.hpp"
#include "hte/mob_tree.hpp"
#include "oracles.hpp"

using namespace hte;

namespace {

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

ScoreMatrix noise_scores(std::size_t n, Rng& rng) {
  ScoreMatrix s(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, 0) = standard_normal(rng);
    s(i, 1) = standard_normal(rng);
  }
  return s;
}

}  // namespace

TEST_CASE("null p-values are uniform") {
  Rng rng(derive_seed(21, {}));
  std::vector<double> p;
  const std::vector<std::size_t> cand{0};
  for (int sim = 0; sim < 1000; ++sim) {
    const auto data = oracle::noise_data(200, 1, rng);
    const auto sel = select_split_variable(noise_scores(200, rng), data, iota_rows(200), cand);
    REQUIRE(sel);
    p.push_back(sel->p_value);
  }
  CHECK(oracle::ks_pvalue_uniform(p) > 0.05);
}

TEST_CASE("selected variable is uniform over candidates under the null") {
  Rng rng(derive_seed(22, {}));
  std::vector<std::size_t> counts(5, 0);
  const std::vector<std::size_t> cand{0, 1, 2, 3, 4};
  for (int sim = 0; sim < 500; ++sim) {
    const auto data = oracle::noise_data(200, 5, rng);
    const auto sel = select_split_variable(noise_scores(200, rng), data, iota_rows(200), cand);
    REQUIRE(sel);
    ++counts[sel->var];
  }
  CHECK(oracle::chisq_uniform_pvalue(counts) > 0.01);
}

TEST_CASE("single candidate is returned with its p-value") {
  Rng rng(derive_seed(23, {}));
  const auto data = oracle::noise_data(60, 3, rng);
  const std::vector<std::size_t> cand{2};
  const auto sel = select_split_variable(noise_scores(60, rng), data, iota_rows(60), cand);
  REQUIRE(sel);
  CHECK(sel->var == 2);
  CHECK(sel->p_value >= 0.0);
  CHECK(sel->p_value <= 1.0);
  CHECK(sel->adjusted_p_value == doctest::Approx(sel->p_value));
}

TEST_CASE("constant candidates are skipped and alpha stops selection") {
  std::vector<Sample> samples;
  Rng rng(derive_seed(24, {}));
  for (int i = 0; i < 40; ++i)
    samples.push_back({{1.0, uniform_open(rng)}, i % 2, Continuous{standard_normal(rng)}});
  const auto data = Dataset::create(samples);
  const auto scores = noise_scores(40, rng);
  const std::vector<std::size_t> only_const{0};
  CHECK_FALSE(select_split_variable(scores, data, iota_rows(40), only_const));
  const std::vector<std::size_t> both{0, 1};
  const auto sel = select_split_variable(scores, data, iota_rows(40), both);
  REQUIRE(sel);
  CHECK(sel->var == 1);
  CHECK_FALSE(select_split_variable(scores, data, iota_rows(40), both, 1e-300));
}

TEST_CASE("step effect selects x1 in most runs") {
  int hits = 0;
  for (int s = 0; s < 100; ++s) {
    Rng rng(derive_seed(25, {static_cast<std::uint64_t>(s)}));
    const auto data = oracle::step_data(400, 5, rng, 0.5);
    const auto design = CenteredDesign::naive(data);
    const auto family = ModelFamily::linear_gaussian();
    const auto rows = iota_rows(400);
    const auto fit = fit_rows(family, data, design, rows);
    const std::vector<std::size_t> cand{0, 1, 2, 3, 4};
    const auto sel = select_split_variable(score_rows(family, fit, data, design, rows), data, rows, cand);
    hits += sel && sel->var == 0;
  }
  CHECK(hits >= 95);
}

TEST_CASE("cutpoint for a noiseless step") {
  // Both arms at every grid point, y = 1[x > 0.5] w; scores of the unsplit fit.
  std::vector<Sample> samples;
  std::vector<double> x;
  for (int i = 0; i < 40; ++i) {
    x.push_back((i / 2 + 0.5) / 20.0);
    const int w = i % 2;
    samples.push_back({{x.back()}, w, Continuous{x.back() > 0.5 ? double(w) : 0.0}});
  }
  const auto data = Dataset::create(samples);
  const auto design = CenteredDesign::naive(data);
  const auto rows = iota_rows(40);
  const auto family = ModelFamily::linear_gaussian();
  const auto s = score_rows(family, fit_rows(family, data, design, rows), data, design, rows);
  const auto c = select_cutpoint(s, x, 5);
  REQUIRE(c);
  CHECK(*c >= 9.5 / 20.0);
  CHECK(*c <= 0.5);
}

TEST_CASE("no admissible cutpoint below twice the node size") {
  Rng rng(derive_seed(26, {}));
  const std::size_t m = 7;
  std::vector<double> x;
  for (std::size_t i = 0; i < 2 * m - 1; ++i) x.push_back(uniform_open(rng));
  CHECK_FALSE(select_cutpoint(noise_scores(2 * m - 1, rng), x, m));
  x.push_back(uniform_open(rng));
  CHECK(select_cutpoint(noise_scores(2 * m, rng), x, m));
}

TEST_CASE("cutpoint respects node size on both sides") {
  Rng rng(derive_seed(27, {}));
  std::vector<double> x;
  for (int i = 0; i < 50; ++i) x.push_back(uniform_open(rng));
  const auto c = select_cutpoint(noise_scores(50, rng), x, 10);
  REQUIRE(c);
  const auto left = std::count_if(x.begin(), x.end(), [&](double v) { return v <= *c; });
  CHECK(left >= 10);
  CHECK(50 - left >= 10);
}

TEST_CASE("linear effect splits near the median") {
  double mean_rank = 0.0;
  for (int s = 0; s < 50; ++s) {
    Rng rng(derive_seed(28, {static_cast<std::uint64_t>(s)}));
    std::vector<double> x;
    ScoreMatrix sc(500, 2);
    for (int i = 0; i < 500; ++i) {
      x.push_back(uniform_open(rng));
      const double w = uniform_open(rng) < 0.5 ? 1.0 : 0.0;
      // Residual of a constant-effect fit when the true effect is linear in x.
      const double r = (x.back() - 0.5) * w + 0.3 * standard_normal(rng);
      sc(i, 0) = r;
      sc(i, 1) = r * w;
    }
    const auto c = select_cutpoint(sc, x, 14);
    REQUIRE(c);
    mean_rank += static_cast<double>(std::count_if(x.begin(), x.end(), [&](double v) { return v <= *c; })) / 500.0;
  }
  mean_rank /= 50.0;
  CHECK(mean_rank > 0.35);
  CHECK(mean_rank < 0.65);
}

TEST_CASE("min_node_size at least n gives the root fit") {
  Rng rng(derive_seed(29, {}));
  const auto data = oracle::step_data(60, 2, rng);
  const auto design = CenteredDesign::naive(data);
  TreeConfig cfg;
  cfg.min_node_size = 60;
  const auto rows = iota_rows(60);
  const auto tree = grow_tree(data, ModelFamily::linear_gaussian(), design, cfg, rows);
  CHECK(tree.nodes().size() == 1);
  const auto root = fit_rows(ModelFamily::linear_gaussian(), data, design, rows);
  CHECK(tree.root().params.tau == doctest::Approx(root.tau).epsilon(1e-12));
}

TEST_CASE("noiseless step gives a depth-one tree with exact leaves") {
  Rng rng(derive_seed(30, {}));
  const auto data = oracle::step_data(400, 1, rng);
  const auto design = CenteredDesign::naive(data);
  TreeConfig cfg;
  cfg.max_depth = 1;
  const auto tree = grow_tree(data, ModelFamily::linear_gaussian(), design, cfg, iota_rows(400));
  REQUIRE(tree.nodes().size() == 3);
  const auto& root = tree.root();
  CHECK(root.var == 0);
  CHECK(root.cutpoint >= 0.45);
  CHECK(root.cutpoint <= 0.55);
  CHECK(tree.nodes()[root.left].params.tau == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::abs(tree.nodes()[root.left].params.tau) < 1e-6);
  CHECK(std::abs(tree.nodes()[root.right].params.tau - 1.0) < 1e-6);
}

TEST_CASE("same seed gives an identical tree") {
  Rng rng(derive_seed(31, {}));
  const auto data = oracle::step_data(300, 6, rng, 0.3);
  const auto design = CenteredDesign::naive(data);
  TreeConfig cfg;
  cfg.mtry = 3;
  cfg.rng_seed = 99;
  const auto rows = iota_rows(300);
  const auto a = grow_tree(data, ModelFamily::linear_gaussian(), design, cfg, rows);
  const auto b = grow_tree(data, ModelFamily::linear_gaussian(), design, cfg, rows);
  CHECK(tree_to_json(a).dump() == tree_to_json(b).dump());
  const auto round = tree_from_json(tree_to_json(a));
  CHECK(tree_to_json(round).dump() == tree_to_json(a).dump());
}

TEST_CASE("leaves partition the subsample") {
  Rng rng(derive_seed(32, {}));
  const auto data = oracle::step_data(300, 4, rng, 0.3);
  const auto design = CenteredDesign::naive(data);
  std::vector<std::size_t> sub;
  for (std::size_t i = 0; i < 300; i += 2) sub.push_back(i);
  TreeConfig cfg;
  const auto tree = grow_tree(data, ModelFamily::linear_gaussian(), design, cfg, sub);
  std::vector<std::size_t> all;
  for (const auto& node : tree.nodes()) {
    if (!node.is_leaf) {
      for (std::size_t i : tree.nodes()[node.left].members) CHECK(data.x(i, node.var) <= node.cutpoint);
      for (std::size_t i : tree.nodes()[node.right].members) CHECK(data.x(i, node.var) > node.cutpoint);
      continue;
    }
    CHECK(node.members.size() >= cfg.min_node_size);
    all.insert(all.end(), node.members.begin(), node.members.end());
    for (std::size_t i : node.members) CHECK(tree.leaf_of(data, i) == node.id);
  }
  std::sort(all.begin(), all.end());
  CHECK(all == sub);
}

TEST_CASE("monotone covariate transform keeps the partition") {
  Rng rng(derive_seed(33, {}));
  const auto data = oracle::step_data(300, 3, rng, 0.3);
  std::vector<Sample> t = data.samples();
  for (auto& s : t)
    for (double& v : s.covariates) v = std::exp(3.0 * v) - 7.0;
  const auto transformed = Dataset::create(t);
  TreeConfig cfg;
  const auto rows = iota_rows(300);
  const auto a = grow_tree(data, ModelFamily::linear_gaussian(), CenteredDesign::naive(data), cfg, rows);
  const auto b = grow_tree(transformed, ModelFamily::linear_gaussian(), CenteredDesign::naive(transformed),
                           cfg, rows);
  REQUIRE(a.nodes().size() == b.nodes().size());
  for (std::size_t k = 0; k < a.nodes().size(); ++k) {
    CHECK(a.nodes()[k].var == b.nodes()[k].var);
    CHECK(a.nodes()[k].members == b.nodes()[k].members);
  }
}

TEST_CASE("config validation") {
  TreeConfig cfg;
  cfg.min_node_size = 5;
  CHECK_THROWS_AS(cfg.validate(3), ArgumentError);
  cfg.min_node_size = 6;
  CHECK_NOTHROW(cfg.validate(3));
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(3), ArgumentError);
}
