#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hte/dgp.hpp"
#include "hte/errors.hpp"
#include "hte/mob_forest.hpp"
#include "oracles.hpp"

using namespace hte;

namespace {

std::vector<double> gaussian_y(const Dataset& d) {
  std::vector<double> y;
  for (const auto& s : d.samples()) y.push_back(std::get<Continuous>(s.outcome).value);
  return y;
}

ForestConfig small_forest(std::size_t trees, std::uint64_t seed) {
  ForestConfig cfg;
  cfg.n_trees = trees;
  cfg.rng_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("subsamples are sorted, distinct and of the right size") {
  const auto s = draw_subsample(101, 0.5, 7, 3);
  CHECK(s.size() == 51);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(s == draw_subsample(101, 0.5, 7, 3));
  CHECK(s != draw_subsample(101, 0.5, 7, 4));
  CHECK(draw_subsample(10, 1.0, 7, 0).size() == 10);
}

TEST_CASE("single tree weights are one over the leaf size") {
  Rng rng(derive_seed(41, {}));
  const auto data = oracle::step_data(200, 2, rng, 0.2);
  auto cfg = small_forest(1, 5);
  cfg.subsample_fraction = 1.0;
  const auto forest = fit_forest(data, ModelFamily::linear_gaussian(), CenteredDesign::naive(data), cfg);
  const auto& tree = forest.trees().front();
  for (std::size_t q = 0; q < 20; ++q) {
    const auto x = data[q].covariates;
    const auto& leaf = tree.nodes()[tree.leaf_of(x)];
    const auto w = query_weights(forest, x);
    std::vector<double> expect(200, 0.0);
    for (std::size_t i : leaf.members) expect[i] = 1.0 / static_cast<double>(leaf.members.size());
    for (std::size_t i = 0; i < 200; ++i) CHECK(w[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  }
}

TEST_CASE("forest of root-only trees gives uniform weights and the global fit") {
  Rng rng(derive_seed(42, {}));
  const auto data = oracle::step_data(50, 2, rng, 0.2);
  auto cfg = small_forest(3, 6);
  cfg.subsample_fraction = 1.0;
  cfg.tree.min_node_size = 50;
  const auto design = CenteredDesign::naive(data);
  const auto forest = fit_forest(data, ModelFamily::linear_gaussian(), design, cfg);
  const std::vector<double> x{0.3, 0.3};
  for (double w : query_weights(forest, x)) CHECK(w == doctest::Approx(1.0 / 50.0).epsilon(1e-14));
  const auto e = predict_effect(forest, data, x);
  CHECK(e.tau == doctest::Approx(forest.root_fit().tau).epsilon(1e-10));
  CHECK(e.mu == doctest::Approx(forest.root_fit().mu).epsilon(1e-10));
}

TEST_CASE("weights sum to one and exclusion zeroes the row") {
  Rng rng(derive_seed(43, {}));
  const auto data = oracle::step_data(300, 3, rng, 0.3);
  const auto forest =
      fit_forest(data, ModelFamily::linear_gaussian(), CenteredDesign::naive(data), small_forest(30, 7));
  for (int q = 0; q < 100; ++q) {
    const std::vector<double> x{uniform_open(rng), uniform_open(rng), uniform_open(rng)};
    const auto w = query_weights(forest, x);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : w) CHECK(v >= 0.0);
  }
  const auto w = query_weights(forest, data[4].covariates, std::size_t{4});
  CHECK(w[4] == 0.0);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gaussian prediction equals the weighted least squares oracle") {
  Rng rng(derive_seed(44, {}));
  const auto data = oracle::step_data(300, 3, rng, 0.5);
  const auto design = oracle::random_design(data, rng);
  const auto forest = fit_forest(data, ModelFamily::linear_gaussian(), design, small_forest(20, 8));
  const auto y = gaussian_y(data);
  std::vector<double> yc(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) yc[i] = y[i] - design.offset[i];
  for (int q = 0; q < 20; ++q) {
    const std::vector<double> x{uniform_open(rng), uniform_open(rng), uniform_open(rng)};
    const auto w = query_weights(forest, x);
    const auto [a, b] = oracle::weighted_normal_equations(yc, design.treatment_regressor, w);
    const auto e = predict_effect(forest, data, x);
    CHECK_FALSE(e.fallback);
    CHECK(std::abs(e.tau - b) < 1e-8);
    CHECK(std::abs(e.mu - a) < 1e-8);
  }
}

TEST_CASE("noiseless step is recovered") {
  Rng rng(derive_seed(45, {}));
  const auto data = oracle::step_data(400, 3, rng);
  const auto forest =
      fit_forest(data, ModelFamily::linear_gaussian(), CenteredDesign::naive(data), small_forest(50, 9));
  for (const auto& tree : forest.trees()) {
    REQUIRE_FALSE(tree.root().is_leaf);
    CHECK(tree.root().var == 0);
  }
  const std::vector<double> hi(3, 0.9), lo(3, 0.1);
  CHECK(std::abs(predict_effect(forest, data, hi).tau - 1.0) < 0.05);
  CHECK(std::abs(predict_effect(forest, data, lo).tau) < 0.05);
}

TEST_CASE("worker count does not change the forest") {
  Rng rng(derive_seed(46, {}));
  const auto data = oracle::random_family_data(ModelFamily::binomial_logit(), 300, rng);
  const auto design = CenteredDesign::naive(data);
  auto cfg = small_forest(16, 10);
  const auto a = fit_forest(data, ModelFamily::binomial_logit(), design, cfg);
  cfg.workers = 4;
  const auto b = fit_forest(data, ModelFamily::binomial_logit(), design, cfg);
  auto ja = forest_to_json(a), jb = forest_to_json(b);
  ja["config"].erase("workers");
  jb["config"].erase("workers");
  CHECK(ja.dump() == jb.dump());
  const auto pa = predict_effects(a, data, data, 1), pb = predict_effects(b, data, data, 3);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tau == pb[i].tau);
}

TEST_CASE("saved forest predicts identically") {
  Rng rng(derive_seed(47, {}));
  const auto family = ModelFamily::proportional_odds(4);
  const auto data = oracle::random_family_data(family, 200, rng);
  const auto design = oracle::random_design(data, rng);
  const auto forest = fit_forest(data, family, design, small_forest(10, 11));
  const auto path = std::filesystem::temp_directory_path() / "hte_forest_roundtrip.json";
  save_forest(forest, path);
  const auto loaded = load_forest(path);
  std::filesystem::remove(path);
  CHECK(forest_to_json(loaded).dump() == forest_to_json(forest).dump());
  for (std::size_t i = 0; i < 10; ++i) {
    const auto a = predict_effect(forest, data, data[i].covariates);
    const auto b = predict_effect(loaded, data, data[i].covariates);
    CHECK(a.tau == b.tau);
  }
}

TEST_CASE("more data does not hurt on setup B") {
  double mse[2] = {0.0, 0.0};
  const std::size_t ns[2] = {400, 1600};
  for (int k = 0; k < 2; ++k)
    for (std::uint64_t s = 0; s < 10; ++s) {
      DgpSpec spec;
      spec.scenario = Scenario::parse("B");
      spec.n = ns[k];
      spec.p = 5;
      spec.seed = derive_seed(48, {s});
      const auto [train, _] = sample(spec);
      spec.n = 200;
      spec.seed = derive_seed(49, {s});
      const auto [test, truth] = sample(spec);
      const auto forest = fit_forest(train, ModelFamily::linear_gaussian(), CenteredDesign::naive(train),
                                     small_forest(30, s));
      for (std::size_t i = 0; i < test.n(); ++i) {
        const double d = predict_effect(forest, train, test[i].covariates).tau - truth.tau[i];
        mse[k] += d * d / 2000.0;
      }
    }
  CHECK(mse[1] <= mse[0]);
}

TEST_CASE("config validation") {
  ForestConfig cfg;
  cfg.n_trees = 0;
  CHECK_THROWS_AS(cfg.validate(ModelFamily::linear_gaussian()), ArgumentError);
  cfg.n_trees = 1;
  cfg.subsample_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(ModelFamily::linear_gaussian()), ArgumentError);
  cfg.subsample_fraction = 1.0;
  CHECK_NOTHROW(cfg.validate(ModelFamily::linear_gaussian()));
}
