#include "hte/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "hte/errors.hpp"
#include "hte/parallel.hpp"

namespace hte {

namespace {

constexpr double kEtaBound = 15.0;
constexpr double kLeafBound = 10.0;

std::vector<std::size_t> arm_rows(const Dataset& data, int arm) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.n(); ++i)
    if (data.w(i) == arm) rows.push_back(i);
  return rows;
}

// Training loss of one boosting machine: per-row values on `rows`, evaluated
// at the additive predictor F (F[k] belongs to rows[k]).
class BoostLoss {
 public:
  BoostLoss(const Dataset& data, const ModelFamily& family, std::span<const std::size_t> rows,
            const ModelParams& fixed)
      : data_(data), family_(family), rows_(rows.begin(), rows.end()), fixed_(fixed) {
    if (family_.kind == FamilyKind::LinearGaussian) fixed_.phi = 1.0;
    if (family_.kind == FamilyKind::CoxPartial) {
      design_.variant = Variant::Robinson;
      design_.offset.assign(data.n(), 0.0);
      design_.treatment_regressor.assign(data.n(), 0.0);
    }
  }

  double value(std::span<const double> f) {
    if (family_.kind == FamilyKind::CoxPartial) {
      set_offsets(f);
      return neg_log_lik_rows(family_, {}, data_, design_, rows_);
    }
    double v = 0.0;
    for (std::size_t k = 0; k < rows_.size(); ++k)
      v += observation_eta_loss(family_, fixed_, data_[rows_[k]].outcome, f[k]).value;
    return v;
  }

  // Gradient and (diagonal) Hessian of the loss in each F[k].
  void derivatives(std::span<const double> f, std::vector<double>& g, std::vector<double>& h) {
    g.resize(rows_.size());
    h.resize(rows_.size());
    if (family_.kind == FamilyKind::CoxPartial) {
      set_offsets(f);
      const ScoreMatrix s = score_rows(family_, {}, data_, design_, rows_);
      for (std::size_t k = 0; k < rows_.size(); ++k) {
        const double delta = std::get<Survival>(data_[rows_[k]].outcome).event ? 1.0 : 0.0;
        g[k] = -s(static_cast<Eigen::Index>(k), 0);
        // exp(-eta) times the cumulative baseline hazard, the diagonal
        // information used by gbm's Cox loss.
        h[k] = std::max(0.0, delta - g[k]);
      }
      return;
    }
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      const EtaLoss e = observation_eta_loss(family_, fixed_, data_[rows_[k]].outcome, f[k]);
      g[k] = e.d1;
      h[k] = e.d2;
    }
  }

 private:
  void set_offsets(std::span<const double> f) {
    for (std::size_t k = 0; k < rows_.size(); ++k) design_.offset[rows_[k]] = f[k];
  }

  const Dataset& data_;
  const ModelFamily& family_;
  std::vector<std::size_t> rows_;
  ModelParams fixed_;
  CenteredDesign design_;
};

// Constant c minimizing sum_k loss_k(c) for the separable families.
double constant_fit(const Dataset& data, const ModelFamily& family,
                    std::span<const std::size_t> rows, const ModelParams& fixed) {
  switch (family.kind) {
    case FamilyKind::LinearGaussian: {
      double s = 0.0;
      for (std::size_t i : rows) s += std::get<Continuous>(data[i].outcome).value;
      return s / static_cast<double>(rows.size());
    }
    case FamilyKind::BinomialLogit: {
      double s = 0.0;
      for (std::size_t i : rows) s += std::get<Binary>(data[i].outcome).value;
      const double n = static_cast<double>(rows.size());
      return logit(std::clamp(s / n, 0.5 / n, 1.0 - 0.5 / n));
    }
    case FamilyKind::CoxPartial:
      return 0.0;
    default:
      break;
  }
  auto total = [&](double c) {
    EtaLoss t;
    for (std::size_t i : rows) {
      const EtaLoss e = observation_eta_loss(family, fixed, data[i].outcome, c);
      t.value += e.value;
      t.d1 += e.d1;
      t.d2 += e.d2;
    }
    return t;
  };
  double c = 0.0;
  EtaLoss cur = total(c);
  for (int it = 0; it < 100 && std::abs(cur.d1) > 1e-10 * rows.size(); ++it) {
    double step = cur.d2 > 0.0 ? -cur.d1 / cur.d2 : -cur.d1;
    bool moved = false;
    for (int half = 0; half < 40; ++half, step *= 0.5) {
      const double next = std::clamp(c + step, -kEtaBound, kEtaBound);
      const EtaLoss cand = total(next);
      if (cand.value <= cur.value) {
        moved = next != c;
        c = next;
        cur = cand;
        break;
      }
    }
    if (!moved) break;
  }
  return c;
}

// Thresholds logit of the pooled cumulative level frequencies.
std::vector<double> marginal_thresholds(const Dataset& data) {
  const int kk = data.num_levels();
  std::vector<double> count(static_cast<std::size_t>(kk), 0.0);
  for (const auto& s : data.samples()) count[std::get<Ordinal>(s.outcome).level - 1] += 1.0;
  const double n = static_cast<double>(data.n());
  std::vector<double> theta;
  double cum = 0.0;
  for (int k = 0; k + 1 < kk; ++k) {
    cum += count[static_cast<std::size_t>(k)];
    double t = logit(std::clamp(cum / n, 0.5 / n, 1.0 - 0.5 / n));
    if (!theta.empty() && !(t > theta.back())) t = theta.back() + 1e-6;
    theta.push_back(t);
  }
  return theta;
}

double clip(double v, double eps) { return std::clamp(v, eps, 1.0 - eps); }

}  // namespace

void BoostConfig::validate() const {
  if (n_rounds < 1) throw ArgumentError("n_rounds must be at least 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0))
    throw ArgumentError("learning_rate must lie in (0, 1]");
  if (max_tree_depth < 1) throw ArgumentError("max_tree_depth must be at least 1");
  if (min_leaf < 1) throw ArgumentError("min_leaf must be at least 1");
  if (!(bag_fraction > 0.0 && bag_fraction <= 1.0)) throw ArgumentError("bag_fraction must lie in (0, 1]");
  if (!(leaf_l2 >= 0.0)) throw ArgumentError("leaf_l2 must be non-negative");
}

double BoostModel::predict(std::span<const double> x) const {
  double f = init;
  for (const auto& t : trees) f += t.predict(x);
  return f;
}

std::vector<double> estimate_propensity(const Dataset& data, const PropensityConfig& cfg) {
  data.require_both_arms();
  if (cfg.n_trees < 1) throw ArgumentError("propensity forest needs at least one tree");
  const std::size_t n = data.n();
  CartConfig cart;
  cart.min_leaf = cfg.min_node_size;
  cart.mtry = cfg.mtry;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  // pred[b][i] is NaN when row i lands in a leaf without estimation rows.
  std::vector<std::vector<double>> pred(cfg.n_trees, std::vector<double>(n, nan));
  std::vector<std::vector<char>> in_bag(cfg.n_trees, std::vector<char>(n, 0));
  parallel_for(cfg.n_trees, cfg.workers, [&](std::size_t b) {
    Rng rng(derive_seed(cfg.rng_seed, {b}));
    const auto m = std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(
                                                            cfg.subsample_fraction * static_cast<double>(n)))));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng() % (n - i))]);
    idx.resize(m);
    for (std::size_t i : idx) in_bag[b][i] = 1;
    const bool honest = cfg.honesty && m >= 2;
    std::vector<std::size_t> grow(idx.begin(), honest ? idx.begin() + static_cast<std::ptrdiff_t>(m / 2) : idx.end());
    std::vector<std::size_t> est(honest ? idx.begin() + static_cast<std::ptrdiff_t>(m / 2) : idx.begin(), idx.end());
    std::sort(grow.begin(), grow.end());
    std::vector<double> target;
    for (std::size_t i : grow) target.push_back(static_cast<double>(data.w(i)));
    RegressionTree t = RegressionTree::fit(data, grow, target, cart, rng);
    std::vector<double> sum(t.nodes().size(), 0.0), cnt(t.nodes().size(), 0.0);
    for (std::size_t i : est) {
      const int leaf = t.leaf_of(data[i].covariates);
      sum[leaf] += data.w(i);
      cnt[leaf] += 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int leaf = t.leaf_of(data[i].covariates);
      if (cnt[leaf] > 0.0) pred[b][i] = sum[leaf] / cnt[leaf];
    }
  });
  const double w_bar = static_cast<double>(data.count_treated()) / static_cast<double>(n);
  std::vector<double> pi(n);
  for (std::size_t i = 0; i < n; ++i) {
    double oob = 0.0, all = 0.0;
    std::size_t n_oob = 0, n_all = 0;
    for (std::size_t b = 0; b < cfg.n_trees; ++b) {
      if (std::isnan(pred[b][i])) continue;
      all += pred[b][i];
      ++n_all;
      if (!in_bag[b][i]) {
        oob += pred[b][i];
        ++n_oob;
      }
    }
    double v = w_bar;
    if (n_oob > 0)
      v = oob / static_cast<double>(n_oob);
    else if (n_all > 0)
      v = all / static_cast<double>(n_all);
    pi[i] = clip(v, cfg.clip);
  }
  return pi;
}

BoostModel boost(const Dataset& data, const ModelFamily& family, std::span<const std::size_t> rows,
                 const BoostConfig& cfg, const ModelParams& fixed, std::optional<double> init,
                 std::vector<std::string>* warnings) {
  cfg.validate();
  if (rows.empty()) throw ValidationError("boosting needs at least one row");
  if (!family.accepts(data.outcome_kind()))
    throw ValidationError(fmt::format("family {} cannot model {} outcomes", family.name(),
                                      to_string(data.outcome_kind())));
  int rounds = cfg.n_rounds;
  if (rows.size() < 20) {
    rounds = std::max(1, static_cast<int>(cfg.n_rounds * rows.size() / 20));
    if (warnings)
      warnings->push_back(fmt::format("boosting on {} rows: rounds reduced to {}", rows.size(), rounds));
  }
  CartConfig cart;
  cart.max_depth = cfg.max_tree_depth;
  cart.min_leaf = std::min(cfg.min_leaf, std::max<std::size_t>(1, rows.size() / 4));

  BoostModel model;
  model.init = init ? *init : constant_fit(data, family, rows, fixed);
  BoostLoss loss(data, family, rows, fixed);
  const std::size_t m = rows.size();
  std::vector<double> f(m, model.init), g, h, next(m);
  double current = loss.value(f);
  model.loss_trace.push_back(current);
  const std::size_t bag = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(cfg.bag_fraction * static_cast<double>(m))),
      std::min<std::size_t>(m, 2 * cart.min_leaf), m);
  std::vector<std::size_t> perm(m), bag_rows;
  std::vector<double> bag_target;
  std::vector<int> leaf(m);
  const bool track_oob = cfg.oob_stopping && bag < m;
  std::vector<std::size_t> oob_rows;
  std::vector<double> oob_f, oob_next;
  // Cumulative out-of-bag improvement after each round and the tree count then.
  double oob_gain = 0.0, best_gain = 0.0;
  std::size_t best_trees = 0;
  std::size_t best_round = 0;
  for (int round = 0; round < rounds; ++round) {
    loss.derivatives(f, g, h);
    Rng rng(derive_seed(cfg.rng_seed, {static_cast<std::uint64_t>(round)}));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = 0; k < bag && bag < m; ++k)
      std::swap(perm[k], perm[k + static_cast<std::size_t>(rng() % (m - k))]);
    std::sort(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(bag));
    bag_rows.clear();
    bag_target.clear();
    for (std::size_t k = 0; k < bag; ++k) {
      bag_rows.push_back(rows[perm[k]]);
      bag_target.push_back(-g[perm[k]]);
    }
    RegressionTree tree = RegressionTree::fit(data, bag_rows, bag_target, cart, rng);
    // Newton value per leaf from the bagged rows.
    const std::size_t n_nodes = tree.nodes().size();
    std::vector<double> gs(n_nodes, 0.0), hs(n_nodes, 0.0);
    std::vector<std::size_t> count(n_nodes, 0);
    for (std::size_t k = 0; k < m; ++k) leaf[k] = tree.leaf_of(data[rows[k]].covariates);
    for (std::size_t b = 0; b < bag; ++b) {
      const std::size_t k = perm[b];
      gs[leaf[k]] += g[k];
      hs[leaf[k]] += h[k];
      ++count[leaf[k]];
    }
    std::vector<double> value(n_nodes, 0.0);
    for (std::size_t q = 0; q < n_nodes; ++q) {
      if (!tree.nodes()[q].is_leaf || count[q] == 0) continue;
      const double hh = std::max(hs[q] + cfg.leaf_l2, 1e-8 * static_cast<double>(count[q]));
      value[q] = std::clamp(-gs[q] / hh, -kLeafBound, kLeafBound);
    }
    // Shrunken step, halved until the training loss does not increase.
    double scale = cfg.learning_rate;
    bool accepted = false;
    for (int half = 0; half < 30; ++half, scale *= 0.5) {
      for (std::size_t k = 0; k < m; ++k) next[k] = f[k] + scale * value[leaf[k]];
      const double v = loss.value(next);
      if (v <= current) {
        current = v;
        f.swap(next);
        accepted = true;
        break;
      }
    }
    if (accepted) {
      if (track_oob) {
        // f already holds the updated predictor; next holds the previous one.
        oob_rows.clear();
        oob_f.clear();
        oob_next.clear();
        for (std::size_t b = bag; b < m; ++b) {
          oob_rows.push_back(rows[perm[b]]);
          oob_f.push_back(next[perm[b]]);
          oob_next.push_back(f[perm[b]]);
        }
        BoostLoss oob(data, family, oob_rows, fixed);
        oob_gain += oob.value(oob_f) - oob.value(oob_next);
      }
      for (std::size_t q = 0; q < n_nodes; ++q)
        tree.set_value(static_cast<int>(q), tree.nodes()[q].is_leaf ? scale * value[q] : 0.0);
      model.trees.push_back(std::move(tree));
    }
    model.loss_trace.push_back(current);
    if (track_oob && oob_gain > best_gain) {
      best_gain = oob_gain;
      best_trees = model.trees.size();
      best_round = static_cast<std::size_t>(round) + 1;
    }
  }
  if (track_oob) {
    model.trees.resize(best_trees);
    model.loss_trace.resize(best_round + 1);
  }
  return model;
}

std::vector<double> boost_gradient(const Dataset& data, const ModelFamily& family,
                                   std::span<const std::size_t> rows, std::span<const double> f,
                                   const ModelParams& fixed) {
  if (f.size() != rows.size()) throw ArgumentError("boost_gradient: f and rows differ in length");
  BoostLoss loss(data, family, rows, fixed);
  std::vector<double> g, h;
  loss.derivatives(f, g, h);
  return g;
}

ArmPredictions estimate_arm_predictors(const Dataset& data, const ModelFamily& family,
                                       const BoostConfig& cfg) {
  const auto rows0 = arm_rows(data, 0);
  const auto rows1 = arm_rows(data, 1);
  if (rows0.empty() || rows1.empty()) throw ValidationError("single treatment arm");
  ArmPredictions out;
  // Transformation families share h(y) across arms so that the arm
  // predictors live on a common scale.
  ModelParams fixed;
  if (family.kind == FamilyKind::ProportionalOdds) fixed.theta = marginal_thresholds(data);
  if (family.kind == FamilyKind::WeibullPH) {
    const ModelParams pooled = fit_node(family, data, std::vector<double>(data.n(), 1.0),
                                        CenteredDesign::naive(data));
    fixed.nu1 = pooled.nu1;
    fixed.nu2 = pooled.nu2;
  }
  BoostConfig c0 = cfg, c1 = cfg;
  c0.rng_seed = derive_seed(cfg.rng_seed, {0});
  c1.rng_seed = derive_seed(cfg.rng_seed, {1});
  const BoostModel m0 = boost(data, family, rows0, c0, fixed, std::nullopt, &out.warnings);
  const BoostModel m1 = boost(data, family, rows1, c1, fixed, std::nullopt, &out.warnings);
  out.eta0.resize(data.n());
  out.eta1.resize(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    out.eta0[i] = m0.predict(data[i].covariates);
    out.eta1[i] = m1.predict(data[i].covariates);
  }
  if (family.kind == FamilyKind::CoxPartial) {
    // Each arm's partial likelihood leaves its level free. Tie the arms to a
    // common baseline hazard by a pooled fit of the arm shift.
    CenteredDesign d;
    d.variant = Variant::Robinson;
    for (std::size_t i = 0; i < data.n(); ++i) {
      d.offset.push_back(data.w(i) == 1 ? out.eta1[i] : out.eta0[i]);
      d.treatment_regressor.push_back(static_cast<double>(data.w(i)));
    }
    try {
      const ModelParams shift = fit_node(family, data, std::vector<double>(data.n(), 1.0), d);
      for (double& v : out.eta1) v += shift.tau;
    } catch (const Error& e) {
      out.warnings.push_back(std::string("cox arm shift not estimated: ") + e.what());
    }
  }
  return out;
}

std::vector<double> compute_offsets(std::span<const double> pi, std::span<const double> eta0,
                                    std::span<const double> eta1) {
  if (pi.size() != eta0.size() || pi.size() != eta1.size())
    throw ArgumentError("nuisance vectors differ in length");
  std::vector<double> m(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) m[i] = pi[i] * eta1[i] + (1.0 - pi[i]) * eta0[i];
  return m;
}

std::vector<double> compute_gao_weights(std::span<const double> pi, std::span<const double> eta0,
                                        std::span<const double> eta1, const ModelFamily& family,
                                        std::span<const std::array<double, 2>> uncensored_prob,
                                        double clip_eps) {
  if (pi.size() != eta0.size() || pi.size() != eta1.size())
    throw ArgumentError("nuisance vectors differ in length");
  std::vector<double> a(pi.size());
  switch (family.kind) {
    case FamilyKind::LinearGaussian:
      a.assign(pi.begin(), pi.end());
      return a;
    case FamilyKind::BinomialLogit:
      for (std::size_t i = 0; i < pi.size(); ++i) {
        const double p0 = expit(eta0[i]), p1 = expit(eta1[i]);
        const double v0 = p0 * (1.0 - p0), v1 = p1 * (1.0 - p1);
        const double v = v1 > 0.0 ? pi[i] / (pi[i] + (1.0 - pi[i]) * v0 / v1) : 0.0;
        a[i] = clip(v, clip_eps);
      }
      return a;
    case FamilyKind::CoxPartial:
      if (uncensored_prob.size() != pi.size())
        throw ArgumentError("Cox weights need uncensored probabilities for every sample");
      for (std::size_t i = 0; i < pi.size(); ++i) {
        const double q0 = uncensored_prob[i][0], q1 = uncensored_prob[i][1];
        a[i] = clip(pi[i] * q1 / (pi[i] * q1 + (1.0 - pi[i]) * q0), clip_eps);
      }
      return a;
    default:
      throw UnsupportedVariantError("Gao weights are not available for the " + family.name() +
                                    " family");
  }
}

std::vector<std::array<double, 2>> estimate_uncensored_prob(const Dataset& data,
                                                            const BoostConfig& cfg,
                                                            std::vector<std::string>* warnings) {
  if (data.outcome_kind() != OutcomeKind::Survival)
    throw ValidationError("uncensored probabilities need right-censored survival outcomes");
  std::vector<Sample> events;
  events.reserve(data.n());
  for (const auto& s : data.samples())
    events.push_back({s.covariates, s.treatment, Binary{std::get<Survival>(s.outcome).event ? 1 : 0}});
  const Dataset ev = Dataset::create(std::move(events), data.covariate_names());
  const auto family = ModelFamily::binomial_logit();
  std::vector<std::array<double, 2>> out(data.n());
  for (int arm = 0; arm < 2; ++arm) {
    const auto rows = arm_rows(data, arm);
    if (rows.empty()) throw ValidationError("single treatment arm");
    const bool all_censored = std::none_of(rows.begin(), rows.end(), [&](std::size_t i) {
      return std::get<Binary>(ev[i].outcome).value == 1;
    });
    if (all_censored && warnings)
      warnings->push_back(fmt::format("arm {} is fully censored; probabilities clipped at 0.01", arm));
    BoostConfig c = cfg;
    c.rng_seed = derive_seed(cfg.rng_seed, {2 + static_cast<std::uint64_t>(arm)});
    const BoostModel m = boost(ev, family, rows, c, {}, std::nullopt, warnings);
    for (std::size_t i = 0; i < data.n(); ++i)
      out[i][arm] = std::clamp(expit(m.predict(data[i].covariates)), 0.01, 1.0);
  }
  return out;
}

NuisanceProfile estimate_nuisance(const Dataset& data, const ModelFamily& family,
                                  const NuisanceConfig& cfg) {
  NuisanceProfile p;
  p.pi = estimate_propensity(data, cfg.propensity);
  ArmPredictions arms = estimate_arm_predictors(data, family, cfg.boost);
  p.eta0 = std::move(arms.eta0);
  p.eta1 = std::move(arms.eta1);
  p.warnings = std::move(arms.warnings);
  if (cfg.direct_gaussian_m && family.kind == FamilyKind::LinearGaussian) {
    std::vector<std::size_t> all(data.n());
    std::iota(all.begin(), all.end(), 0);
    BoostConfig c = cfg.boost;
    c.rng_seed = derive_seed(cfg.boost.rng_seed, {4});
    const BoostModel pooled = boost(data, family, all, c);
    for (std::size_t i = 0; i < data.n(); ++i) p.m.push_back(pooled.predict(data[i].covariates));
  } else {
    p.m = compute_offsets(p.pi, p.eta0, p.eta1);
  }
  const bool gao_family = family.kind == FamilyKind::LinearGaussian ||
                          family.kind == FamilyKind::BinomialLogit ||
                          family.kind == FamilyKind::CoxPartial;
  if (cfg.gao && gao_family) {
    if (family.kind == FamilyKind::CoxPartial)
      p.uncensored_prob = estimate_uncensored_prob(data, cfg.boost, &p.warnings);
    p.a = compute_gao_weights(p.pi, p.eta0, p.eta1, family, p.uncensored_prob,
                              cfg.propensity.clip);
    if (family.kind == FamilyKind::LinearGaussian && !cfg.direct_gaussian_m)
      p.nu = p.m;
    else
      p.nu = compute_offsets(p.a, p.eta0, p.eta1);
  }
  return p;
}

CenteredDesign build_design(Variant variant, const Dataset& data, const NuisanceProfile* profile) {
  CenteredDesign d = CenteredDesign::naive(data);
  d.variant = variant;
  if (variant == Variant::Naive) return d;
  if (!profile || profile->size() != data.n())
    throw ArgumentError(to_string(variant) + " needs a nuisance profile aligned with the data");
  const bool gao = variant == Variant::GaoW || variant == Variant::Gao;
  if (gao && !profile->has_gao())
    throw UnsupportedVariantError(to_string(variant) +
                                  " is not available for this family (no Gao weights)");
  const std::vector<double>& center = gao ? profile->a : profile->pi;
  for (std::size_t i = 0; i < data.n(); ++i) d.treatment_regressor[i] = data.w(i) - center[i];
  if (variant == Variant::Robinson) d.offset = profile->m;
  if (variant == Variant::Gao) d.offset = profile->nu;
  return d;
}

std::string profile_to_csv(const NuisanceProfile& p) {
  std::string out = "pi,eta0,eta1,m,a,nu,uncensored0,uncensored1\n";
  auto num = [](double v) { return fmt::format("{:.17g}", v); };
  for (std::size_t i = 0; i < p.size(); ++i) {
    out += num(p.pi[i]) + "," + num(p.eta0[i]) + "," + num(p.eta1[i]) + "," + num(p.m[i]) + ",";
    out += (p.a.empty() ? "NA" : num(p.a[i])) + "," + (p.nu.empty() ? "NA" : num(p.nu[i])) + ",";
    if (p.uncensored_prob.empty())
      out += "NA,NA\n";
    else
      out += num(p.uncensored_prob[i][0]) + "," + num(p.uncensored_prob[i][1]) + "\n";
  }
  return out;
}

void write_profile_csv(const NuisanceProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << profile_to_csv(profile);
}

}  // namespace hte
