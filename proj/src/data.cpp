#include "hte/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hte/errors.hpp"
#include "hte/rng.hpp"

namespace hte {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Splits one CSV record; double quotes may wrap a field and "" escapes a quote.
std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(trim(field));
  return fields;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == ".";
}

double parse_real(const std::string& cell, long row, long column) {
  const std::string low = lower(cell);
  if (low == "inf" || low == "+inf" || low == "infinity") return INFINITY;
  if (low == "-inf" || low == "-infinity") return -INFINITY;
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (!cell.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || std::isnan(value)) {
    throw ParseError(fmt::format("row {}, column {}: cannot parse '{}' as a number", row,
                                 column, cell),
                     row, column);
  }
  return value;
}

int parse_binary(const std::string& cell, long row, long column, const char* what) {
  const double v = parse_real(cell, row, column);
  if (v != 0.0 && v != 1.0) {
    throw ParseError(
        fmt::format("row {}, column {}: {} must be 0 or 1, got '{}'", row, column, what, cell),
        row, column);
  }
  return static_cast<int>(v);
}

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", v);
}

}  // namespace

std::string to_string(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::Continuous: return "continuous";
    case OutcomeKind::Binary: return "binary";
    case OutcomeKind::Ordinal: return "ordinal";
    case OutcomeKind::Survival: return "survival";
    case OutcomeKind::Interval: return "interval";
  }
  return "?";
}

OutcomeKind outcome_kind_from_string(const std::string& name) {
  const std::string n = lower(name);
  if (n == "continuous") return OutcomeKind::Continuous;
  if (n == "binary") return OutcomeKind::Binary;
  if (n == "ordinal") return OutcomeKind::Ordinal;
  if (n == "survival") return OutcomeKind::Survival;
  if (n == "interval") return OutcomeKind::Interval;
  throw ArgumentError("unknown outcome kind '" + name + "'");
}

OutcomeKind kind_of(const OutcomeValue& y) {
  return std::visit(Overloaded{
                        [](const Continuous&) { return OutcomeKind::Continuous; },
                        [](const Binary&) { return OutcomeKind::Binary; },
                        [](const Ordinal&) { return OutcomeKind::Ordinal; },
                        [](const Survival&) { return OutcomeKind::Survival; },
                        [](const Interval&) { return OutcomeKind::Interval; },
                    },
                    y);
}

void validate_outcome(const OutcomeValue& y) {
  std::visit(
      Overloaded{
          [](const Continuous& c) {
            if (!std::isfinite(c.value)) throw ValidationError("continuous outcome not finite");
          },
          [](const Binary& b) {
            if (b.value != 0 && b.value != 1) throw ValidationError("binary outcome not 0/1");
          },
          [](const Ordinal& o) {
            if (o.num_levels < 2) throw ValidationError("ordinal outcome needs K >= 2");
            if (o.level < 1 || o.level > o.num_levels)
              throw ValidationError(
                  fmt::format("ordinal level {} outside [1, {}]", o.level, o.num_levels));
          },
          [](const Survival& s) {
            if (!std::isfinite(s.time) || s.time <= 0.0)
              throw ValidationError(
                  fmt::format("survival time must be finite and > 0, got {}", s.time));
          },
          [](const Interval& iv) {
            if (std::isnan(iv.lower) || std::isnan(iv.upper) || !(iv.lower < iv.upper))
              throw ValidationError(
                  fmt::format("interval requires lower < upper, got ({}, {}]", iv.lower, iv.upper));
          },
      },
      y);
}

Dataset Dataset::create(std::vector<Sample> samples, std::vector<std::string> covariate_names) {
  Dataset d;
  if (samples.empty()) throw ValidationError("dataset has no samples");
  d.p_ = samples.front().covariates.size();
  if (d.p_ == 0) throw ValidationError("dataset has no covariates");
  d.kind_ = kind_of(samples.front().outcome);
  if (d.kind_ == OutcomeKind::Ordinal)
    d.num_levels_ = std::get<Ordinal>(samples.front().outcome).num_levels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.covariates.size() != d.p_)
      throw ValidationError(fmt::format("sample {}: {} covariates, expected {}", i,
                                        s.covariates.size(), d.p_));
    for (double v : s.covariates)
      if (std::isnan(v)) throw ValidationError(fmt::format("sample {}: missing covariate", i));
    if (s.treatment != 0 && s.treatment != 1)
      throw ValidationError(fmt::format("sample {}: treatment must be 0 or 1", i));
    if (kind_of(s.outcome) != d.kind_)
      throw ValidationError(fmt::format("sample {}: mixed outcome variants", i));
    try {
      validate_outcome(s.outcome);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("sample {}: {}", i, e.what()));
    }
    if (d.kind_ == OutcomeKind::Ordinal &&
        std::get<Ordinal>(s.outcome).num_levels != d.num_levels_)
      throw ValidationError(fmt::format("sample {}: inconsistent number of levels", i));
  }
  if (covariate_names.empty()) {
    for (std::size_t j = 0; j < d.p_; ++j) covariate_names.push_back(fmt::format("x{}", j + 1));
  } else if (covariate_names.size() != d.p_) {
    throw ValidationError("covariate name count does not match p");
  }
  d.samples_ = std::move(samples);
  d.covariate_names_ = std::move(covariate_names);
  return d;
}

std::size_t Dataset::count_treated() const {
  return static_cast<std::size_t>(std::count_if(
      samples_.begin(), samples_.end(), [](const Sample& s) { return s.treatment == 1; }));
}

void Dataset::require_both_arms() const {
  const std::size_t treated = count_treated();
  if (treated == 0 || treated == n()) throw ValidationError("single treatment arm");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset d;
  d.p_ = p_;
  d.kind_ = kind_;
  d.num_levels_ = num_levels_;
  d.covariate_names_ = covariate_names_;
  d.samples_.reserve(rows.size());
  for (std::size_t r : rows) d.samples_.push_back(samples_.at(r));
  return d;
}

Dataset Dataset::without_covariates(std::span<const std::size_t> drop) const {
  std::vector<bool> keep(p_, true);
  for (std::size_t j : drop) keep.at(j) = false;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p_; ++j)
    if (keep[j]) names.push_back(covariate_names_[j]);
  std::vector<Sample> samples = samples_;
  for (Sample& s : samples) {
    std::vector<double> x;
    for (std::size_t j = 0; j < p_; ++j)
      if (keep[j]) x.push_back(s.covariates[j]);
    s.covariates = std::move(x);
  }
  return create(std::move(samples), std::move(names));
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Naive: return "Naive";
    case Variant::RobinsonW: return "RobinsonW";
    case Variant::Robinson: return "Robinson";
    case Variant::GaoW: return "GaoW";
    case Variant::Gao: return "Gao";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  const std::string n = lower(name);
  if (n == "naive") return Variant::Naive;
  if (n == "robinsonw" || n == "robinson_w") return Variant::RobinsonW;
  if (n == "robinson") return Variant::Robinson;
  if (n == "gaow" || n == "gao_w") return Variant::GaoW;
  if (n == "gao") return Variant::Gao;
  throw ArgumentError("unknown variant '" + name + "'");
}

CenteredDesign CenteredDesign::naive(const Dataset& data) {
  CenteredDesign d;
  d.variant = Variant::Naive;
  d.offset.assign(data.n(), 0.0);
  d.treatment_regressor.resize(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) d.treatment_regressor[i] = data.w(i);
  return d;
}

void CenteredDesign::validate() const {
  if (treatment_regressor.size() != offset.size())
    throw ValidationError("design regressor/offset length mismatch");
  for (std::size_t i = 0; i < offset.size(); ++i) {
    if (!std::isfinite(offset[i]) || !std::isfinite(treatment_regressor[i]))
      throw ValidationError(fmt::format("design entry {} not finite", i));
  }
  const bool zero_offset = variant == Variant::Naive || variant == Variant::RobinsonW ||
                           variant == Variant::GaoW;
  if (zero_offset &&
      std::any_of(offset.begin(), offset.end(), [](double o) { return o != 0.0; }))
    throw ValidationError(to_string(variant) + " design requires a zero offset");
  if (variant == Variant::Naive &&
      std::any_of(treatment_regressor.begin(), treatment_regressor.end(),
                  [](double t) { return t != 0.0 && t != 1.0; }))
    throw ValidationError("Naive design requires a 0/1 treatment regressor");
}

CenteredDesign CenteredDesign::subset(std::span<const std::size_t> rows) const {
  CenteredDesign d;
  d.variant = variant;
  d.offset.reserve(rows.size());
  d.treatment_regressor.reserve(rows.size());
  for (std::size_t r : rows) {
    d.offset.push_back(offset.at(r));
    d.treatment_regressor.push_back(treatment_regressor.at(r));
  }
  return d;
}

Schema Schema::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("schema: ") + e.what());
  }
  Schema s;
  try {
    s.kind = outcome_kind_from_string(j.at("outcome_kind").get<std::string>());
    s.treatment = j.value("treatment", std::string("w"));
    const auto& out = j.at("outcome");
    if (out.is_string()) {
      s.outcome = {out.get<std::string>()};
    } else if (out.is_array()) {
      s.outcome = out.get<std::vector<std::string>>();
    } else if (s.kind == OutcomeKind::Survival) {
      s.outcome = {out.at("time").get<std::string>(), out.at("event").get<std::string>()};
    } else if (s.kind == OutcomeKind::Interval) {
      s.outcome = {out.at("lower").get<std::string>(), out.at("upper").get<std::string>()};
    } else {
      throw ParseError("schema: 'outcome' must name the outcome column");
    }
    s.num_levels = j.value("num_levels", 0);
    if (j.contains("level_labels")) {
      for (const auto& label : j.at("level_labels"))
        s.level_labels.push_back(label.is_string() ? label.get<std::string>() : label.dump());
      if (s.num_levels == 0) s.num_levels = static_cast<int>(s.level_labels.size());
    }
    if (j.contains("covariates")) s.covariates = j.at("covariates").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("schema: ") + e.what());
  }
  const std::size_t want =
      (s.kind == OutcomeKind::Survival || s.kind == OutcomeKind::Interval) ? 2 : 1;
  if (s.outcome.size() != want)
    throw ParseError(fmt::format("schema: {} outcome needs {} column(s)", to_string(s.kind), want));
  if (s.kind == OutcomeKind::Ordinal && s.num_levels < 2)
    throw ParseError("schema: ordinal outcome needs num_levels >= 2");
  if (!s.level_labels.empty() && static_cast<int>(s.level_labels.size()) != s.num_levels)
    throw ParseError("schema: level_labels must have num_levels entries");
  return s;
}

Schema Schema::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open schema file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

Schema Schema::default_for(const Dataset& data) {
  Schema s;
  s.kind = data.outcome_kind();
  s.treatment = "w";
  switch (s.kind) {
    case OutcomeKind::Survival: s.outcome = {"time", "event"}; break;
    case OutcomeKind::Interval: s.outcome = {"lower", "upper"}; break;
    default: s.outcome = {"y"}; break;
  }
  s.num_levels = data.num_levels();
  s.covariates = data.covariate_names();
  return s;
}

LoadResult load_csv_text(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: missing header row", 0, -1);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  const std::vector<std::string> header = split_record(line);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!column.emplace(header[c], c).second)
      throw ParseError("duplicate column '" + header[c] + "'", 0, static_cast<long>(c));
  }
  auto locate = [&](const std::string& name, const char* role) {
    const auto it = column.find(name);
    if (it == column.end())
      throw ValidationError(fmt::format("missing {} column '{}'", role, name));
    return it->second;
  };
  const std::size_t w_col = locate(schema.treatment, "treatment");
  std::vector<std::size_t> y_cols;
  for (const auto& name : schema.outcome) y_cols.push_back(locate(name, "outcome"));
  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (const auto& name : header) {
      if (name == schema.treatment ||
          std::find(schema.outcome.begin(), schema.outcome.end(), name) != schema.outcome.end())
        continue;
      cov_names.push_back(name);
    }
  }
  std::vector<std::size_t> x_cols;
  for (const auto& name : cov_names) x_cols.push_back(locate(name, "covariate"));

  std::vector<Sample> samples;
  std::vector<long> bad_rows;
  std::string bad_reason;
  std::size_t dropped = 0;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_record(line);
    if (cells.size() != header.size())
      throw ParseError(fmt::format("row {}: {} fields, header has {}", row, cells.size(),
                                   header.size()),
                       row, -1);
    bool outcome_missing = false;
    for (std::size_t c : y_cols) outcome_missing |= is_missing(cells[c]);
    if (outcome_missing) {
      ++dropped;
      continue;
    }
    Sample s;
    s.treatment = parse_binary(cells[w_col], row, static_cast<long>(w_col), "treatment");
    for (std::size_t c : x_cols) {
      if (is_missing(cells[c]))
        throw ValidationError(fmt::format("row {}: missing covariate '{}'", row, header[c]));
      s.covariates.push_back(parse_real(cells[c], row, static_cast<long>(c)));
    }
    const auto yc = [&](std::size_t k) { return static_cast<long>(y_cols[k]); };
    switch (schema.kind) {
      case OutcomeKind::Continuous:
        s.outcome = Continuous{parse_real(cells[y_cols[0]], row, yc(0))};
        break;
      case OutcomeKind::Binary:
        s.outcome = Binary{parse_binary(cells[y_cols[0]], row, yc(0), "binary outcome")};
        break;
      case OutcomeKind::Ordinal: {
        const std::string& cell = cells[y_cols[0]];
        int level = 0;
        if (!schema.level_labels.empty()) {
          const auto it = std::find(schema.level_labels.begin(), schema.level_labels.end(), cell);
          if (it == schema.level_labels.end())
            throw ParseError(fmt::format("row {}: unknown ordinal label '{}'", row, cell), row,
                             yc(0));
          level = static_cast<int>(it - schema.level_labels.begin()) + 1;
        } else {
          const double v = parse_real(cell, row, yc(0));
          if (v != std::floor(v))
            throw ParseError(fmt::format("row {}: ordinal level '{}' is not an integer", row, cell),
                             row, yc(0));
          level = static_cast<int>(v);
        }
        s.outcome = Ordinal{level, schema.num_levels};
        break;
      }
      case OutcomeKind::Survival:
        s.outcome = Survival{parse_real(cells[y_cols[0]], row, yc(0)),
                             parse_binary(cells[y_cols[1]], row, yc(1), "event") == 1};
        break;
      case OutcomeKind::Interval:
        s.outcome = Interval{parse_real(cells[y_cols[0]], row, yc(0)),
                             parse_real(cells[y_cols[1]], row, yc(1))};
        break;
    }
    try {
      validate_outcome(s.outcome);
    } catch (const ValidationError& e) {
      bad_rows.push_back(row);
      if (bad_reason.empty()) bad_reason = e.what();
      continue;
    }
    samples.push_back(std::move(s));
  }
  if (!bad_rows.empty()) {
    throw ValidationError(fmt::format("invalid outcome in row(s) {} ({})",
                                      fmt::join(bad_rows, ", "), bad_reason));
  }
  LoadResult result;
  result.dropped_missing_outcome = dropped;
  result.data = Dataset::create(std::move(samples), std::move(cov_names));
  result.data.require_both_arms();
  return result;
}

LoadResult load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open CSV file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return load_csv_text(buf.str(), schema);
}

std::string write_csv_text(const Dataset& data) {
  const Schema schema = Schema::default_for(data);
  std::string out;
  for (const auto& name : schema.covariates) out += name + ",";
  out += schema.treatment;
  for (const auto& name : schema.outcome) out += "," + name;
  out += "\n";
  for (const Sample& s : data.samples()) {
    for (double v : s.covariates) out += format_real(v) + ",";
    out += std::to_string(s.treatment);
    std::visit(Overloaded{
                   [&](const Continuous& c) { out += "," + format_real(c.value); },
                   [&](const Binary& b) { out += "," + std::to_string(b.value); },
                   [&](const Ordinal& o) { out += "," + std::to_string(o.level); },
                   [&](const Survival& v) {
                     out += "," + format_real(v.time) + "," + (v.event ? "1" : "0");
                   },
                   [&](const Interval& iv) {
                     out += "," + format_real(iv.lower) + "," + format_real(iv.upper);
                   },
               },
               s.outcome);
    out += "\n";
  }
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << write_csv_text(data);
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, std::size_t n_test,
                                             std::uint64_t seed, bool allow_empty_test) {
  if (n_test >= data.n())
    throw ArgumentError(fmt::format("n_test = {} must be smaller than n = {}", n_test, data.n()));
  if (n_test == 0 && !allow_empty_test) throw ArgumentError("n_test must be positive");
  std::vector<std::size_t> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with our own index draws keeps the split identical across
  // standard library implementations.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<long>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

}  // namespace hte
