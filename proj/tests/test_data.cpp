#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>

#include "hte/data.hpp"
#include "hte/errors.hpp"
#include "hte/rng.hpp"

using namespace hte;

namespace {

Schema continuous_schema() {
  Schema s;
  s.kind = OutcomeKind::Continuous;
  s.outcome = {"y"};
  return s;
}

Dataset small_continuous(std::size_t n) {
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i)
    samples.push_back({{static_cast<double>(i), 0.5 * i}, static_cast<int>(i % 2),
                       Continuous{1.0 + i}});
  return Dataset::create(std::move(samples));
}

}  // namespace

TEST_CASE("three row CSV loads") {
  const auto r = load_csv_text("y,w,x1\n1.5,0,0.1\n2.0,1,0.2\n-0.3,1,0.3\n", continuous_schema());
  CHECK(r.data.n() == 3);
  CHECK(r.data.p() == 1);
  CHECK(r.dropped_missing_outcome == 0);
  CHECK(r.data.w(0) == 0);
  CHECK(r.data.x(2, 0) == doctest::Approx(0.3));
  CHECK(std::get<Continuous>(r.data[0].outcome).value == 1.5);
}

TEST_CASE("single treatment arm rejected") {
  try {
    load_csv_text("y,w,x1\n1,1,0\n2,1,1\n", continuous_schema());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("single treatment arm") != std::string::npos);
  }
}

TEST_CASE("survival time zero names the row") {
  Schema s;
  s.kind = OutcomeKind::Survival;
  s.outcome = {"time", "event"};
  try {
    load_csv_text("time,event,w,x1\n1.0,1,0,0.5\n0,1,1,0.2\n2.0,0,1,0.1\n", s);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row(s) 2") != std::string::npos);
  }
}

TEST_CASE("malformed numeric cell carries location") {
  try {
    load_csv_text("y,w,x1\n1,0,abc\n2,1,1\n", continuous_schema());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 1);
    CHECK(e.column() == 2);
  }
}

TEST_CASE("missing outcome rows are dropped and counted") {
  const auto r = load_csv_text("y,w,x1\n1,0,0\nNA,1,1\n,0,2\n3,1,3\n", continuous_schema());
  CHECK(r.data.n() == 2);
  CHECK(r.dropped_missing_outcome == 2);
}

TEST_CASE("missing covariate rejected") {
  CHECK_THROWS_AS(load_csv_text("y,w,x1\n1,0,\n2,1,1\n", continuous_schema()), ValidationError);
}

TEST_CASE("ordinal labels map to levels") {
  Schema s;
  s.kind = OutcomeKind::Ordinal;
  s.outcome = {"y"};
  s.num_levels = 3;
  s.level_labels = {"low", "mid", "high"};
  const auto r = load_csv_text("y,w,x1\nhigh,0,1\nlow,1,2\nmid,1,3\n", s);
  CHECK(r.data.num_levels() == 3);
  CHECK(std::get<Ordinal>(r.data[0].outcome).level == 3);
  CHECK(std::get<Ordinal>(r.data[1].outcome).level == 1);
}

TEST_CASE("dataset invariants checked at construction") {
  CHECK_THROWS_AS(Dataset::create({}), ValidationError);
  CHECK_THROWS_AS(Dataset::create({{{1.0}, 0, Continuous{1}}, {{1.0, 2.0}, 1, Continuous{1}}}),
                  ValidationError);
  CHECK_THROWS_AS(
      Dataset::create({{{std::numeric_limits<double>::quiet_NaN()}, 0, Continuous{1}}}),
      ValidationError);
  CHECK_THROWS_AS(Dataset::create({{{1.0}, 0, Continuous{1}}, {{1.0}, 1, Binary{1}}}),
                  ValidationError);
  CHECK_THROWS_AS(Dataset::create({{{1.0}, 0, Ordinal{4, 3}}}), ValidationError);
  CHECK_THROWS_AS(Dataset::create({{{1.0}, 0, Interval{2.0, 1.0}}}), ValidationError);
  CHECK_THROWS_AS(Dataset::create({{{1.0}, 2, Continuous{1}}}), ValidationError);
  CHECK_NOTHROW(Dataset::create(
      {{{1.0}, 0, Interval{-std::numeric_limits<double>::infinity(), 1.0}}}));
}

TEST_CASE("design invariants") {
  const auto d = small_continuous(4);
  auto design = CenteredDesign::naive(d);
  CHECK_NOTHROW(design.validate());
  design.offset[0] = 0.1;
  CHECK_THROWS_AS(design.validate(), ValidationError);
  design.offset[0] = 0.0;
  design.treatment_regressor[0] = 0.3;
  CHECK_THROWS_AS(design.validate(), ValidationError);
  design.variant = Variant::RobinsonW;
  CHECK_NOTHROW(design.validate());
  design.offset[1] = 1.0;
  CHECK_THROWS_AS(design.validate(), ValidationError);
  design.variant = Variant::Robinson;
  CHECK_NOTHROW(design.validate());
}

TEST_CASE("split sizes and determinism") {
  const auto d = small_continuous(10);
  const auto [train, test] = split_train_test(d, 4, 1);
  CHECK(train.n() == 6);
  CHECK(test.n() == 4);
  const auto [train2, test2] = split_train_test(d, 4, 1);
  CHECK(write_csv_text(train) == write_csv_text(train2));
  CHECK(write_csv_text(test) == write_csv_text(test2));

  // Disjoint and covering: x0 holds the original index.
  std::vector<int> seen(10, 0);
  for (const auto& s : train.samples()) ++seen[static_cast<std::size_t>(s.covariates[0])];
  for (const auto& s : test.samples()) ++seen[static_cast<std::size_t>(s.covariates[0])];
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("split boundaries") {
  const auto d = small_continuous(10);
  CHECK_THROWS_AS(split_train_test(d, 10, 1), ArgumentError);
  CHECK_THROWS_AS(split_train_test(d, 0, 1), ArgumentError);
  const auto [train, test] = split_train_test(d, 0, 1, true);
  CHECK(train.n() == 10);
  CHECK(test.empty());
}

TEST_CASE("csv round trip is identity") {
  Rng rng(derive_seed(7, {1}));
  for (int kind = 0; kind < 5; ++kind) {
    std::vector<Sample> samples;
    for (int i = 0; i < 25; ++i) {
      Sample s;
      s.covariates = {standard_normal(rng) * 1e3, uniform_open(rng) * 1e-7};
      s.treatment = i % 2;
      const double u = uniform_open(rng);
      switch (kind) {
        case 0: s.outcome = Continuous{standard_normal(rng) / 3.0}; break;
        case 1: s.outcome = Binary{u < 0.5}; break;
        case 2: s.outcome = Ordinal{1 + i % 4, 4}; break;
        case 3: s.outcome = Survival{-std::log(u), i % 3 != 0}; break;
        default:
          s.outcome = Interval{i % 5 == 0 ? -std::numeric_limits<double>::infinity() : u,
                               i % 7 == 0 ? std::numeric_limits<double>::infinity() : u + 1.0 / 3};
      }
      samples.push_back(std::move(s));
    }
    const auto d = Dataset::create(std::move(samples));
    const auto text = write_csv_text(d);
    auto schema = Schema::default_for(d);
    const auto back = load_csv_text(text, schema).data;
    REQUIRE(back.n() == d.n());
    for (std::size_t i = 0; i < d.n(); ++i) {
      CHECK(back[i].covariates == d[i].covariates);
      CHECK(back[i].treatment == d[i].treatment);
      CHECK(back[i].outcome.index() == d[i].outcome.index());
    }
    CHECK(write_csv_text(back) == text);
  }
}
