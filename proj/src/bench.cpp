#include "hte/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hte/errors.hpp"
#include "hte/parallel.hpp"
#include "hte/rng.hpp"

namespace hte {

namespace {

using nlohmann::json;

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  return fmt::format("{:.17g}", v);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void read_forest(const json& j, ForestConfig& f) {
  f.n_trees = get_or(j, "n_trees", f.n_trees);
  f.subsample_fraction = get_or(j, "subsample_fraction", f.subsample_fraction);
  f.tree.min_node_size = get_or(j, "min_node_size", f.tree.min_node_size);
  f.tree.mtry = get_or(j, "mtry", f.tree.mtry);
  f.tree.alpha = get_or(j, "alpha", f.tree.alpha);
  f.tree.max_depth = get_or(j, "max_depth", f.tree.max_depth);
}

void read_nuisance(const json& j, NuisanceConfig& c) {
  if (j.contains("propensity")) {
    const json& p = j.at("propensity");
    c.propensity.n_trees = get_or(p, "n_trees", c.propensity.n_trees);
    c.propensity.min_node_size = get_or(p, "min_node_size", c.propensity.min_node_size);
    c.propensity.subsample_fraction = get_or(p, "subsample_fraction", c.propensity.subsample_fraction);
    c.propensity.mtry = get_or(p, "mtry", c.propensity.mtry);
    c.propensity.clip = get_or(p, "clip", c.propensity.clip);
    c.propensity.honesty = get_or(p, "honesty", c.propensity.honesty);
  }
  if (j.contains("boost")) {
    const json& b = j.at("boost");
    c.boost.n_rounds = get_or(b, "n_rounds", c.boost.n_rounds);
    c.boost.learning_rate = get_or(b, "learning_rate", c.boost.learning_rate);
    c.boost.max_tree_depth = get_or(b, "max_tree_depth", c.boost.max_tree_depth);
    c.boost.min_leaf = get_or(b, "min_leaf", c.boost.min_leaf);
    c.boost.leaf_l2 = get_or(b, "leaf_l2", c.boost.leaf_l2);
    c.boost.bag_fraction = get_or(b, "bag_fraction", c.boost.bag_fraction);
    c.boost.oob_stopping = get_or(b, "oob_stopping", c.boost.oob_stopping);
  }
  c.direct_gaussian_m = get_or(j, "direct_gaussian_m", c.direct_gaussian_m);
}

Variant variant_of(const std::string& name) { return variant_from_string(name); }

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ForestConfig ExperimentConfig::desk_forest() {
  ForestConfig f;
  f.n_trees = 100;
  return f;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    c.master_seed = get_or(j, "master_seed", c.master_seed);
    if (j.contains("setups")) c.setups = j.at("setups").get<std::vector<std::string>>();
    if (j.contains("outcomes")) {
      c.outcomes.clear();
      for (const auto& o : j.at("outcomes")) c.outcomes.push_back(outcome_family_from_string(o));
    }
    if (j.contains("fit_families")) {
      for (const auto& [key, list] : j.at("fit_families").items()) {
        auto& v = c.fit_families[outcome_family_from_string(key)];
        for (const auto& f : list) v.push_back(ModelFamily::from_string(f.get<std::string>(), 4));
      }
    }
    if (j.contains("n")) c.ns = j.at("n").get<std::vector<std::size_t>>();
    if (j.contains("p")) c.ps = j.at("p").get<std::vector<std::size_t>>();
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(variant_of(v));
    }
    c.replications = get_or(j, "replications", c.replications);
    c.test_size = get_or(j, "test_size", c.test_size);
    if (j.contains("forest")) read_forest(j.at("forest"), c.forest);
    read_nuisance(j, c.nuisance);
    if (j.contains("pairs")) {
      for (const auto& pr : j.at("pairs")) {
        if (!pr.is_array() || pr.size() != 2) throw ParseError("config: each pair needs two variants");
        c.pairs.emplace_back(variant_of(pr[0]), variant_of(pr[1]));
      }
    }
    c.workers = get_or(j, "workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (get_or(j, "paper_scale", false)) c.apply_paper_scale();
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

void ExperimentConfig::apply_paper_scale() {
  forest.n_trees = 500;
  setups = {"A", "B", "C", "D"};
  outcomes = {OutcomeFamily::Normal, OutcomeFamily::Binomial, OutcomeFamily::Multinomial4,
              OutcomeFamily::Weibull};
  fit_families[OutcomeFamily::Weibull] = {ModelFamily::weibull_ph(), ModelFamily::cox_partial()};
  ns = {800, 1600};
  ps = {10, 20};
  variants = {Variant::Naive, Variant::RobinsonW, Variant::Robinson, Variant::GaoW, Variant::Gao};
  replications = 100;
}

std::vector<ModelFamily> ExperimentConfig::fit_families_for(OutcomeFamily outcome) const {
  const auto it = fit_families.find(outcome);
  if (it != fit_families.end() && !it->second.empty()) return it->second;
  return {default_fit_family(outcome)};
}

std::vector<std::pair<Variant, Variant>> ExperimentConfig::ratio_pairs() const {
  if (!pairs.empty()) return pairs;
  std::vector<std::pair<Variant, Variant>> out;
  const auto has = [&](Variant v) { return std::find(variants.begin(), variants.end(), v) != variants.end(); };
  for (Variant v : variants)
    if (v != Variant::Naive && has(Variant::Naive)) out.emplace_back(v, Variant::Naive);
  if (has(Variant::Robinson) && has(Variant::RobinsonW))
    out.emplace_back(Variant::Robinson, Variant::RobinsonW);
  if (has(Variant::Gao) && has(Variant::GaoW)) out.emplace_back(Variant::Gao, Variant::GaoW);
  if (has(Variant::GaoW) && has(Variant::RobinsonW)) out.emplace_back(Variant::GaoW, Variant::RobinsonW);
  if (has(Variant::Gao) && has(Variant::Robinson)) out.emplace_back(Variant::Gao, Variant::Robinson);
  return out;
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw ArgumentError("replications must be at least 1");
  if (test_size < 1) throw ArgumentError("test_size must be at least 1");
  if (setups.empty() || outcomes.empty() || ns.empty() || ps.empty() || variants.empty())
    throw ArgumentError("experiment matrix is empty");
  for (const auto& s : setups) Scenario::parse(s);
  for (OutcomeFamily o : outcomes) {
    for (const auto& f : fit_families_for(o)) {
      DgpSpec spec;
      spec.outcome = o;
      spec.fit_family_override = f;
      spec.validate();
      const bool gao_ok = f.kind == FamilyKind::LinearGaussian ||
                          f.kind == FamilyKind::BinomialLogit || f.kind == FamilyKind::CoxPartial;
      for (Variant v : variants)
        if ((v == Variant::Gao || v == Variant::GaoW) && !gao_ok)
          throw ArgumentError(fmt::format("variant {} is not available for the {} family",
                                          to_string(v), f.name()));
    }
  }
  for (auto n : ns)
    if (n < 2 * forest.tree.min_node_size) throw ArgumentError("n too small for the forest");
  if (workers < 1) throw ArgumentError("workers must be at least 1");
}

std::uint64_t cell_seed(std::uint64_t master, const Scenario& s, OutcomeFamily outcome,
                        std::size_t n, std::size_t p, int replication) {
  return derive_seed(master, {static_cast<std::uint64_t>(s.setup), static_cast<std::uint64_t>(s.wa_row),
                              static_cast<std::uint64_t>(outcome), n, p,
                              static_cast<std::uint64_t>(replication)});
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

namespace {

struct Task {
  Scenario scenario;
  OutcomeFamily outcome;
  std::size_t n, p;
  int replication;
};

void run_task(const ExperimentConfig& cfg, const Task& t, std::vector<ResultRecord>& out) {
  using Clock = std::chrono::steady_clock;
  const std::uint64_t seed = cell_seed(cfg.master_seed, t.scenario, t.outcome, t.n, t.p, t.replication);
  DgpSpec spec;
  spec.scenario = t.scenario;
  spec.outcome = t.outcome;
  spec.n = t.n;
  spec.p = t.p;
  spec.seed = derive_seed(seed, {0});
  const auto [train, train_truth] = sample(spec);
  spec.n = cfg.test_size;
  spec.seed = derive_seed(seed, {1});
  const auto [test, truth] = sample(spec);
  const std::string hash = fnv1a_hex(write_csv_text(train));

  NuisanceConfig nc = cfg.nuisance;
  nc.propensity.rng_seed = derive_seed(seed, {2});
  nc.propensity.workers = 1;
  nc.boost.rng_seed = derive_seed(seed, {4});
  ForestConfig fc = cfg.forest;
  fc.rng_seed = derive_seed(seed, {3});
  fc.workers = 1;

  for (const ModelFamily& family : cfg.fit_families_for(t.outcome)) {
    auto base = [&](Variant v) {
      ResultRecord r;
      r.setup = t.scenario.name();
      r.family = to_string(t.outcome);
      r.fit_family = family.name();
      r.n = t.n;
      r.p = t.p;
      r.variant = v;
      r.replication = t.replication;
      r.seed = seed;
      r.data_hash = hash;
      return r;
    };
    const auto t0 = Clock::now();
    NuisanceProfile profile;
    std::string nuisance_error;
    const bool needs_profile = std::any_of(cfg.variants.begin(), cfg.variants.end(),
                                           [](Variant v) { return v != Variant::Naive; });
    if (needs_profile) {
      try {
        profile = estimate_nuisance(train, family, nc);
      } catch (const Error& e) {
        nuisance_error = e.what();
      }
    }
    const double nuisance_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    for (Variant v : cfg.variants) {
      ResultRecord r = base(v);
      const auto t1 = Clock::now();
      try {
        if (v != Variant::Naive && !nuisance_error.empty()) throw Error("nuisance: " + nuisance_error);
        const CenteredDesign design = build_design(v, train, v == Variant::Naive ? nullptr : &profile);
        const Forest forest = fit_forest(train, family, design, fc);
        double sse = 0.0;
        for (std::size_t i = 0; i < test.n(); ++i) {
          const EffectEstimate e = predict_effect(forest, train, test[i].covariates);
          const double d = e.tau - truth.tau[i];
          sse += d * d;
          r.capped += e.params.capped ? 1 : 0;
          r.fallback += e.fallback ? 1 : 0;
        }
        r.mse = sse / static_cast<double>(test.n());
        if (!std::isfinite(r.mse)) throw EvaluationError("non-finite MSE");
      } catch (const std::exception& e) {
        r.mse = std::numeric_limits<double>::quiet_NaN();
        r.status = std::string("error: ") + e.what();
      }
      r.wall_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t1).count() +
                       (v == Variant::Naive ? 0.0 : nuisance_ms);
      out.push_back(std::move(r));
    }
  }
}

}  // namespace

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<Task> tasks;
  for (const auto& s : cfg.setups)
    for (OutcomeFamily o : cfg.outcomes)
      for (std::size_t n : cfg.ns)
        for (std::size_t p : cfg.ps)
          for (int r = 0; r < cfg.replications; ++r) tasks.push_back({Scenario::parse(s), o, n, p, r});
  // Calibrate censoring once up front rather than racing inside the workers.
  for (const auto& s : cfg.setups)
    for (std::size_t p : cfg.ps)
      if (std::find(cfg.outcomes.begin(), cfg.outcomes.end(), OutcomeFamily::Weibull) != cfg.outcomes.end())
        censoring_rate(Scenario::parse(s), p, 0.5);
  std::vector<std::vector<ResultRecord>> slots(tasks.size());
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t k) { run_task(cfg, tasks[k], slots[k]); });
  std::vector<ResultRecord> records;
  for (auto& s : slots)
    for (auto& r : s) records.push_back(std::move(r));
  return records;
}

double geometric_mean(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : values) s += std::log(v);
  return std::exp(s / static_cast<double>(values.size()));
}

Summary summarize(const std::vector<ResultRecord>& records,
                  const std::vector<std::pair<Variant, Variant>>& pairs) {
  using CellKey = std::tuple<std::string, std::string, std::string, std::size_t, std::size_t>;
  // cell -> variant -> replication -> mse
  std::map<CellKey, std::map<std::string, std::map<int, double>>> by_cell;
  std::vector<CellKey> order;
  for (const auto& r : records) {
    const CellKey key{r.setup, r.family, r.fit_family, r.n, r.p};
    if (!by_cell.contains(key)) order.push_back(key);
    auto& slot = by_cell[key][to_string(r.variant)];
    if (r.ok()) slot[r.replication] = r.mse;
  }
  Summary s;
  auto ratio_row = [&](const CellKey& key, const std::map<int, double>* num_m,
                       const std::map<int, double>* den_m, std::string num, std::string den) {
    RatioRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                 std::get<4>(key), std::move(num), std::move(den), 0, 0.0};
    std::vector<double> ratios;
    if (num_m && den_m)
      for (const auto& [rep, m] : *num_m) {
        const auto it = den_m->find(rep);
        if (it != den_m->end() && m > 0.0 && it->second > 0.0) ratios.push_back(m / it->second);
      }
    row.pairs = ratios.size();
    row.ratio = geometric_mean(ratios);
    s.ratios.push_back(std::move(row));
  };
  auto find = [&](const CellKey& key, const std::string& v) -> const std::map<int, double>* {
    const auto c = by_cell.find(key);
    if (c == by_cell.end()) return nullptr;
    const auto it = c->second.find(v);
    return it == c->second.end() ? nullptr : &it->second;
  };
  for (const auto& key : order) {
    for (const auto& [a, b] : pairs) ratio_row(key, find(key, to_string(a)), find(key, to_string(b)), to_string(a), to_string(b));
    for (const auto& [variant, reps] : by_cell[key]) {
      VariantSummary vs{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                        std::get<4>(key), variant, reps.size(), {}};
      std::vector<double> v;
      for (const auto& [rep, m] : reps) v.push_back(m);
      if (!v.empty())
        for (int q = 0; q < 5; ++q) vs.q[q] = quantile(v, q / 4.0);
      else
        for (double& q : vs.q) q = std::numeric_limits<double>::quiet_NaN();
      s.variants.push_back(std::move(vs));
    }
  }
  // Fit-family comparison on shared data: cox over weibull, per variant.
  for (const auto& key : order) {
    if (std::get<2>(key) != "cox") continue;
    const CellKey weibull{std::get<0>(key), std::get<1>(key), "weibull", std::get<3>(key), std::get<4>(key)};
    if (!by_cell.contains(weibull)) continue;
    for (const auto& [variant, reps] : by_cell[key]) {
      ratio_row(key, &reps, find(weibull, variant), variant + "@cox", variant + "@weibull");
    }
  }
  return s;
}

std::string results_csv(const std::vector<ResultRecord>& records) {
  std::string out = "setup,family,fit_family,n,p,variant,replication,seed,data_hash,mse,capped,fallback,status\n";
  for (const auto& r : records) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.setup, r.family, r.fit_family, r.n,
                       r.p, to_string(r.variant), r.replication, r.seed, r.data_hash, num(r.mse),
                       r.capped, r.fallback, status);
  }
  return out;
}

std::string timings_csv(const std::vector<ResultRecord>& records) {
  std::string out = "setup,family,fit_family,n,p,variant,replication,wall_time_ms\n";
  for (const auto& r : records)
    out += fmt::format("{},{},{},{},{},{},{},{:.1f}\n", r.setup, r.family, r.fit_family, r.n, r.p,
                       to_string(r.variant), r.replication, r.wall_time_ms);
  return out;
}

std::string ratios_csv(const Summary& s) {
  std::string out = "setup,family,fit_family,n,p,numerator,denominator,pairs,geomean_ratio\n";
  for (const auto& r : s.ratios)
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.setup, r.family, r.fit_family, r.n, r.p,
                       r.numerator, r.denominator, r.pairs, r.pairs ? num(r.ratio) : "NA");
  return out;
}

std::string summary_text(const Summary& s) {
  std::string out = "MSE ratios (geometric mean of paired ratios)\n\n";
  out += fmt::format("{:<6} {:<12} {:<9} {:>5} {:>3}  {:<36} {:>5} {:>9}\n", "setup", "family", "fit", "n",
                     "p", "comparison", "pairs", "ratio");
  for (const auto& r : s.ratios)
    out += fmt::format("{:<6} {:<12} {:<9} {:>5} {:>3}  {:<36} {:>5} {:>9}\n", r.setup, r.family,
                       r.fit_family, r.n, r.p, r.numerator + " / " + r.denominator, r.pairs,
                       r.pairs ? fmt::format("{:.3f}", r.ratio) : "NA");
  out += "\nMSE quantiles per variant (min, q25, median, q75, max)\n\n";
  for (const auto& v : s.variants)
    out += fmt::format("{:<6} {:<12} {:<9} {:>5} {:>3}  {:<10} {:>3}  {:.4f} {:.4f} {:.4f} {:.4f} {:.4f}\n",
                       v.setup, v.family, v.fit_family, v.n, v.p, v.variant, v.count, v.q[0], v.q[1],
                       v.q[2], v.q[3], v.q[4]);
  return out;
}

Summary run_and_report(const ExperimentConfig& cfg, std::vector<ResultRecord>* records_out) {
  std::vector<ResultRecord> records = run_experiment(cfg);
  const Summary s = summarize(records, cfg.ratio_pairs());
  std::filesystem::create_directories(cfg.output_dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(cfg.output_dir / name, std::ios::binary);
    if (!out) throw ArgumentError("cannot write " + (cfg.output_dir / name).string());
    out << text;
  };
  write("results.csv", results_csv(records));
  write("timings.csv", timings_csv(records));
  write("ratios.csv", ratios_csv(s));
  write("summary.txt", summary_text(s));
  if (records_out) *records_out = std::move(records);
  return s;
}

ExternalFit fit_external(const Dataset& data, const ExternalFitOptions& opt) {
  data.require_both_arms();
  if (!opt.family.accepts(data.outcome_kind()))
    throw ValidationError(fmt::format("family {} cannot model {} outcomes", opt.family.name(),
                                      to_string(data.outcome_kind())));
  ExternalFit fit;
  NuisanceProfile profile;
  const bool gao = opt.variant == Variant::Gao || opt.variant == Variant::GaoW;
  if (opt.variant != Variant::Naive) {
    NuisanceConfig nc = opt.nuisance;
    nc.gao = gao;
    nc.boost.rng_seed = derive_seed(opt.forest.rng_seed, {4});
    profile = estimate_nuisance(data, opt.family, nc);
    fit.warnings = profile.warnings;
  }
  const CenteredDesign design =
      build_design(opt.variant, data, opt.variant == Variant::Naive ? nullptr : &profile);
  fit.forest = fit_forest(data, opt.family, design, opt.forest);
  const Forest& forest = fit.forest;
  std::vector<EffectEstimate> est(data.n());
  parallel_for(data.n(), opt.forest.workers,
               [&](std::size_t i) { est[i] = predict_effect(forest, data, data[i].covariates); });
  for (std::size_t i = 0; i < data.n(); ++i) {
    fit.tau.push_back(est[i].tau);
    fit.mu.push_back(est[i].mu);
    fit.fallback.push_back(est[i].fallback);
    fit.pi.push_back(profile.pi.empty() ? std::numeric_limits<double>::quiet_NaN() : profile.pi[i]);
  }
  if (gao) fit.a = profile.a;
  fit.mean_tau = std::accumulate(fit.tau.begin(), fit.tau.end(), 0.0) / static_cast<double>(fit.tau.size());
  // Histogram density of tau-hat.
  const auto [lo_it, hi_it] = std::minmax_element(fit.tau.begin(), fit.tau.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const std::size_t bins = std::max<std::size_t>(1, opt.density_bins);
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> count(bins, 0.0);
  for (double t : fit.tau)
    count[std::min(bins - 1, static_cast<std::size_t>((t - lo) / width))] += 1.0;
  for (std::size_t b = 0; b < bins; ++b)
    fit.density.emplace_back(lo + (static_cast<double>(b) + 0.5) * width,
                             count[b] / (static_cast<double>(fit.tau.size()) * width));
  return fit;
}

std::string external_fit_csv(const ExternalFit& fit) {
  std::string out = fit.a.empty() ? "row,tau_hat,mu_hat,pi_hat,fallback\n"
                                  : "row,tau_hat,mu_hat,pi_hat,a_hat,fallback\n";
  for (std::size_t i = 0; i < fit.tau.size(); ++i) {
    out += fmt::format("{},{},{},{}", i + 1, num(fit.tau[i]), num(fit.mu[i]), num(fit.pi[i]));
    if (!fit.a.empty()) out += "," + num(fit.a[i]);
    out += fit.fallback[i] ? ",1\n" : ",0\n";
  }
  return out;
}

std::string density_csv(const ExternalFit& fit) {
  std::string out = "tau_bin_centre,density\n";
  for (const auto& [c, d] : fit.density) out += num(c) + "," + num(d) + "\n";
  return out;
}

}  // namespace hte
