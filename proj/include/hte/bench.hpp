#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hte/data.hpp"
#include "hte/dgp.hpp"
#include "hte/mob_forest.hpp"
#include "hte/nuisance.hpp"

namespace hte {

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  std::vector<std::string> setups = {"C"};
  std::vector<OutcomeFamily> outcomes = {OutcomeFamily::Normal};
  // Fit families per outcome; outcomes not listed use the matching family.
  std::map<OutcomeFamily, std::vector<ModelFamily>> fit_families;
  std::vector<std::size_t> ns = {800};
  std::vector<std::size_t> ps = {10};
  std::vector<Variant> variants = {Variant::Naive, Variant::RobinsonW, Variant::Robinson};
  int replications = 10;
  std::size_t test_size = 1000;
  ForestConfig forest = desk_forest();
  NuisanceConfig nuisance;
  // (numerator, denominator) variant pairs for the ratio table; empty means
  // every ordered pair against Naive plus Robinson vs RobinsonW.
  std::vector<std::pair<Variant, Variant>> pairs;
  int workers = 1;
  std::filesystem::path output_dir = "bench_out";

  static ForestConfig desk_forest();
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  // 500 trees, setups A-D, all outcomes (Cox next to Weibull), N in {800, 1600},
  // P in {10, 20}, all variants, 100 replications.
  void apply_paper_scale();
  std::vector<ModelFamily> fit_families_for(OutcomeFamily outcome) const;
  std::vector<std::pair<Variant, Variant>> ratio_pairs() const;
  void validate() const;
};

struct ResultRecord {
  std::string setup;
  std::string family;      // generated outcome
  std::string fit_family;  // likelihood of the forest
  std::size_t n = 0;
  std::size_t p = 0;
  Variant variant = Variant::Naive;
  int replication = 0;
  std::uint64_t seed = 0;
  std::string data_hash;  // of the training data; equal across paired records
  double mse = 0.0;
  std::size_t capped = 0;    // test predictions with capped parameters
  std::size_t fallback = 0;  // test predictions that fell back to the root fit
  std::string status = "ok";
  double wall_time_ms = 0.0;

  bool ok() const { return status == "ok"; }
};

// Seed of one (setup, outcome, n, p, replication) cell; the fit family is not
// part of the key so that Cox and Weibull fits see the same data.
std::uint64_t cell_seed(std::uint64_t master, const Scenario& s, OutcomeFamily outcome,
                        std::size_t n, std::size_t p, int replication);

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg);

struct RatioRow {
  std::string setup, family, fit_family;
  std::size_t n = 0, p = 0;
  std::string numerator, denominator;  // variant names, or fit families for the fit comparison
  std::size_t pairs = 0;
  double ratio = 0.0;  // geometric mean of the paired MSE ratios; NaN when pairs == 0
};

struct VariantSummary {
  std::string setup, family, fit_family;
  std::size_t n = 0, p = 0;
  std::string variant;
  std::size_t count = 0;
  double q[5] = {0, 0, 0, 0, 0};  // min, 25%, median, 75%, max of the MSE
};

struct Summary {
  std::vector<RatioRow> ratios;
  std::vector<VariantSummary> variants;
};

double geometric_mean(const std::vector<double>& values);

// Paired ratios per cell. Besides the variant pairs, a Cox/Weibull row per
// variant compares fit families on the same data.
Summary summarize(const std::vector<ResultRecord>& records,
                  const std::vector<std::pair<Variant, Variant>>& pairs);

std::string results_csv(const std::vector<ResultRecord>& records);
std::string timings_csv(const std::vector<ResultRecord>& records);
std::string ratios_csv(const Summary& summary);
std::string summary_text(const Summary& summary);

// Runs the experiment and writes results.csv, timings.csv, ratios.csv and
// summary.txt into cfg.output_dir.
Summary run_and_report(const ExperimentConfig& cfg, std::vector<ResultRecord>* records = nullptr);

struct ExternalFitOptions {
  ModelFamily family;
  Variant variant = Variant::Robinson;
  ForestConfig forest;
  NuisanceConfig nuisance;
  std::size_t density_bins = 20;
};

struct ExternalFit {
  std::vector<double> tau;
  std::vector<double> mu;
  std::vector<double> pi;
  std::vector<double> a;  // empty unless a Gao variant ran
  std::vector<bool> fallback;
  double mean_tau = 0.0;
  std::vector<std::pair<double, double>> density;  // (bin centre, density)
  std::size_t dropped_missing_outcome = 0;
  std::vector<std::string> warnings;
  Forest forest;
};

ExternalFit fit_external(const Dataset& data, const ExternalFitOptions& opt);
std::string external_fit_csv(const ExternalFit& fit);
std::string density_csv(const ExternalFit& fit);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace hte
