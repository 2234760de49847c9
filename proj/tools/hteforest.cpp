// Command-line front end: benchmark runs, DGP sampling and fits on CSV data.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <tuple>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hte/bench.hpp"
#include "hte/errors.hpp"
#include "hte/rng.hpp"

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw hte::ArgumentError("cannot write " + path.string());
  out << text;
}

// A cell fails wholly when no replication of a variant produced an MSE.
int count_failed_cells(const std::vector<hte::ResultRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string, std::size_t, std::size_t, std::string>, bool> any_ok;
  for (const auto& r : records) {
    auto& ok = any_ok[{r.setup, r.family, r.fit_family, r.n, r.p, hte::to_string(r.variant)}];
    ok = ok || r.ok();
  }
  int failed = 0;
  for (const auto& [key, ok] : any_ok)
    if (!ok) {
      ++failed;
      std::cerr << fmt::format("cell failed: {} {} {} n={} p={} {}\n", std::get<0>(key), std::get<1>(key),
                               std::get<2>(key), std::get<3>(key), std::get<4>(key), std::get<5>(key));
    }
  return failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based forests for heterogeneous treatment effects"};
  app.require_subcommand(1);

  // bench
  auto* bench = app.add_subcommand("bench", "Run a simulation benchmark");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
  bool paper_scale = false;
  bench->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  bench->add_option("--seed", seed, "Master seed (overrides the config)");
  bench->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  bench->add_option("--output-dir", out_dir, "Output directory (overrides the config)");
  bench->add_flag("--paper-scale", paper_scale, "500 trees, full matrix, 100 replications");

  // dgp sample
  auto* dgp = app.add_subcommand("dgp", "Data generating processes");
  dgp->require_subcommand(1);
  auto* dgp_sample = dgp->add_subcommand("sample", "Write a simulated dataset");
  std::string setup = "C", outcome = "normal", data_out, truth_out;
  std::size_t n = 800, p = 10;
  std::uint64_t dgp_seed = 1;
  double censoring = 0.5;
  dgp_sample->add_option("--setup", setup, "A, B, C, D or WA1..WA16")->capture_default_str();
  dgp_sample->add_option("--outcome", outcome, "normal, binomial, multinomial, weibull")->capture_default_str();
  dgp_sample->add_option("--n", n)->capture_default_str();
  dgp_sample->add_option("--p", p)->capture_default_str();
  dgp_sample->add_option("--seed", dgp_seed)->capture_default_str();
  dgp_sample->add_option("--censoring", censoring, "Weibull censoring fraction")->capture_default_str();
  dgp_sample->add_option("--out", data_out, "Data CSV")->required();
  dgp_sample->add_option("--truth", truth_out, "Ground-truth CSV (default: <out>.truth.csv)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a forest to CSV data and write per-row effects");
  std::string data_path, schema_path, family_name, variant_name = "Robinson", fit_out = "fit_out",
                                                   forest_out;
  std::size_t n_trees = 500, min_node = 0;
  std::uint64_t fit_seed = 1;
  int fit_workers = 1;
  fit->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  fit->add_option("--schema", schema_path)->required()->check(CLI::ExistingFile);
  fit->add_option("--family", family_name, "gaussian, binomial, ordinal, weibull, cox")->required();
  fit->add_option("--variant", variant_name, "Naive, RobinsonW, Robinson, GaoW, Gao")->capture_default_str();
  fit->add_option("--trees", n_trees)->capture_default_str();
  fit->add_option("--min-node-size", min_node, "Default: the tree default");
  fit->add_option("--seed", fit_seed)->capture_default_str();
  fit->add_option("--workers", fit_workers)->check(CLI::PositiveNumber)->capture_default_str();
  fit->add_option("--out", fit_out, "Output directory")->capture_default_str();
  fit->add_option("--save-forest", forest_out, "Write the fitted forest as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) {
      hte::ExperimentConfig cfg;
      if (!config_path.empty()) cfg = hte::ExperimentConfig::from_json_file(config_path);
      if (paper_scale) cfg.apply_paper_scale();
      if (seed) cfg.master_seed = *seed;
      if (workers) cfg.workers = *workers;
      if (out_dir) cfg.output_dir = *out_dir;
      cfg.validate();
      std::vector<hte::ResultRecord> records;
      const hte::Summary s = hte::run_and_report(cfg, &records);
      std::cout << hte::summary_text(s);
      std::cout << fmt::format("\nwrote {} records to {}\n", records.size(), cfg.output_dir.string());
      return count_failed_cells(records) > 0 ? 2 : 0;
    }
    if (dgp_sample->parsed()) {
      hte::DgpSpec spec;
      spec.scenario = hte::Scenario::parse(setup);
      spec.outcome = hte::outcome_family_from_string(outcome);
      spec.n = n;
      spec.p = p;
      spec.seed = dgp_seed;
      spec.censoring = censoring;
      spec.validate();
      const auto [data, truth] = hte::sample(spec);
      hte::write_csv(data, data_out);
      write_text(truth_out.empty() ? data_out + ".truth.csv" : truth_out, hte::truth_to_csv(truth));
      return 0;
    }
    if (fit->parsed()) {
      const hte::Schema schema = hte::Schema::from_json_file(schema_path);
      const hte::LoadResult loaded = hte::load_csv(data_path, schema);
      hte::ExternalFitOptions opt;
      opt.family = hte::ModelFamily::from_string(family_name, loaded.data.num_levels());
      opt.variant = hte::variant_from_string(variant_name);
      opt.forest.n_trees = n_trees;
      if (min_node > 0) opt.forest.tree.min_node_size = min_node;
      opt.forest.rng_seed = fit_seed;
      opt.forest.workers = fit_workers;
      opt.nuisance.propensity.rng_seed = hte::derive_seed(fit_seed, {2});
      opt.nuisance.propensity.workers = fit_workers;
      opt.forest.validate(opt.family);
      hte::ExternalFit result = hte::fit_external(loaded.data, opt);
      result.dropped_missing_outcome = loaded.dropped_missing_outcome;
      const std::filesystem::path dir = fit_out;
      write_text(dir / "tau.csv", hte::external_fit_csv(result));
      write_text(dir / "density.csv", hte::density_csv(result));
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      if (result.dropped_missing_outcome > 0)
        std::cerr << fmt::format("dropped {} rows with missing outcome\n", result.dropped_missing_outcome);
      std::cout << fmt::format("n = {}, mean tau-hat = {:.4f}\n", loaded.data.n(), result.mean_tau);
      if (!forest_out.empty()) hte::save_forest(result.forest, forest_out);
      return 0;
    }
  } catch (const hte::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
