#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace hte {

enum class OutcomeKind { Continuous, Binary, Ordinal, Survival, Interval };

std::string to_string(OutcomeKind kind);
OutcomeKind outcome_kind_from_string(const std::string& name);

struct Continuous {
  double value = 0.0;
};
struct Binary {
  int value = 0;
};
// level is 1-based; num_levels is K.
struct Ordinal {
  int level = 1;
  int num_levels = 2;
};
// Right-censored observation: time = min(event time, censoring time).
struct Survival {
  double time = 1.0;
  bool event = true;
};
// Observation known to lie in (lower, upper]; bounds may be infinite.
struct Interval {
  double lower = 0.0;
  double upper = 1.0;
};

using OutcomeValue = std::variant<Continuous, Binary, Ordinal, Survival, Interval>;

OutcomeKind kind_of(const OutcomeValue& y);

// Throws ValidationError when the value breaks its variant's invariants.
void validate_outcome(const OutcomeValue& y);

struct Sample {
  std::vector<double> covariates;
  int treatment = 0;
  OutcomeValue outcome;
};

// Immutable, validated collection of samples sharing one outcome variant and
// one covariate dimension.
class Dataset {
 public:
  Dataset() = default;

  // Validates every invariant; throws ValidationError on the first violation.
  static Dataset create(std::vector<Sample> samples,
                        std::vector<std::string> covariate_names = {});

  std::size_t n() const { return samples_.size(); }
  std::size_t p() const { return p_; }
  bool empty() const { return samples_.empty(); }
  OutcomeKind outcome_kind() const { return kind_; }
  // K for ordinal data, 0 otherwise.
  int num_levels() const { return num_levels_; }

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  double x(std::size_t i, std::size_t j) const { return samples_[i].covariates[j]; }
  int w(std::size_t i) const { return samples_[i].treatment; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  std::size_t count_treated() const;
  // Throws ValidationError("single treatment arm") unless both arms occur.
  void require_both_arms() const;

  Dataset subset(std::span<const std::size_t> rows) const;
  // Same samples with covariate j removed for every j in `drop`.
  Dataset without_covariates(std::span<const std::size_t> drop) const;

 private:
  std::vector<Sample> samples_;
  std::vector<std::string> covariate_names_;
  std::size_t p_ = 0;
  OutcomeKind kind_ = OutcomeKind::Continuous;
  int num_levels_ = 0;
};

// Orthogonalization variants for the treatment regressor and offset.
enum class Variant { Naive, RobinsonW, Robinson, GaoW, Gao };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

// Per-sample treatment regressor and additive offset entering the linear
// predictor: eta_i = offset_i + mu + tau * treatment_regressor_i.
struct CenteredDesign {
  std::vector<double> treatment_regressor;
  std::vector<double> offset;
  Variant variant = Variant::Naive;

  std::size_t size() const { return offset.size(); }

  static CenteredDesign naive(const Dataset& data);
  // Checks the per-variant invariants (Naive: offset 0 and regressor 0/1;
  // RobinsonW/GaoW: offset 0). Throws ValidationError.
  void validate() const;
  CenteredDesign subset(std::span<const std::size_t> rows) const;
};

// Column roles for CSV ingestion.
struct Schema {
  OutcomeKind kind = OutcomeKind::Continuous;
  std::string treatment = "w";
  // Continuous/Binary/Ordinal: {y}; Survival: {time, event};
  // Interval: {lower, upper}.
  std::vector<std::string> outcome;
  // Ordinal only. When labels are given, level k is the k-th label; otherwise
  // the column must hold integers 1..num_levels.
  int num_levels = 0;
  std::vector<std::string> level_labels;
  // Empty means every remaining column.
  std::vector<std::string> covariates;

  static Schema from_json_text(const std::string& text);
  static Schema from_json_file(const std::filesystem::path& path);
  // Default schema for datasets written by write_csv.
  static Schema default_for(const Dataset& data);
};

struct LoadResult {
  Dataset data;
  std::size_t dropped_missing_outcome = 0;
};

LoadResult load_csv(const std::filesystem::path& path, const Schema& schema);
LoadResult load_csv_text(const std::string& text, const Schema& schema);

// Writes covariates, treatment and outcome columns using the names of
// Schema::default_for; reals are printed with 17 significant digits.
void write_csv(const Dataset& data, const std::filesystem::path& path);
std::string write_csv_text(const Dataset& data);

// Disjoint random partition into (train, test) with |test| = n_test.
// n_test == 0 is only accepted when allow_empty_test is set.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, std::size_t n_test,
                                             std::uint64_t seed,
                                             bool allow_empty_test = false);

}  // namespace hte
