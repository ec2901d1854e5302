#include <gtest/gtest.h>

#include <cmath>

#include "forested/evalkit.hpp"
#include "forested/synthetic.hpp"

using namespace forested;

namespace {

ErrorMatrix from(std::vector<int> v, std::size_t cols) {
  ErrorMatrix m(v.size() / cols, cols);
  for (std::size_t c = 0; c < v.size(); ++c) m.set(c / cols, c % cols, v[c] != 0);
  return m;
}

}  // namespace

TEST(Metrics, CountsAndScores) {
  const auto truth = from({1, 1, 0, 0, 1, 0}, 3);
  const auto pred = from({1, 0, 1, 0, 1, 0}, 3);
  const auto m = metrics(pred, truth);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 2u);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
}

TEST(Metrics, NoPredictionsGiveZero) {
  const auto m = metrics(from({0, 0}, 2), from({1, 0}, 2));
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_THROW(metrics(from({0, 0}, 2), from({0, 0}, 1)), ShapeError);
}

TEST(Fd, ParsesBothSides) {
  const auto fd = parse_fd(" zip , state -> city ");
  EXPECT_EQ(fd.lhs, (std::vector<std::string>{"zip", "state"}));
  EXPECT_EQ(fd.rhs, "city");
  EXPECT_THROW(parse_fd("zip"), SpecError);
  EXPECT_THROW(parse_fd("->city"), SpecError);
}

TEST(Injection, CountsUseLargestRemainder) {
  InjectionSpec spec;
  spec.missing_value = 0.01;
  spec.typo = 0.01;
  spec.pattern_violation = 0.01;
  const auto c = injection_counts(spec, 100);
  std::size_t total = 0;
  for (auto x : c) total += x;
  EXPECT_EQ(total, 3u);
  EXPECT_EQ(c[0], 1u);
  EXPECT_EQ(c[4], 0u);
  const auto u = injection_counts(uniform_spec(0.1, {}, 0), 105);
  total = 0;
  for (auto x : u) total += x;
  EXPECT_EQ(total, 11u);
}

TEST(Injection, TruthEqualsDiff) {
  const auto clean = synthetic_hospital(80, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto res = inject_errors(clean, uniform_spec(0.05 + 0.02 * static_cast<double>(seed), synthetic_fds(), seed));
    EXPECT_TRUE(res.truth.same_entries(diff_error_matrix(res.dirty, clean))) << "seed " << seed;
    EXPECT_EQ(res.log.size(), res.truth.count_ones());
  }
}

TEST(Injection, EachTypeChangesTheCell) {
  const auto clean = synthetic_hospital(100, 4);
  for (int t = 0; t < 5; ++t) {
    InjectionSpec spec;
    spec.fds = synthetic_fds();
    spec.seed = static_cast<std::uint64_t>(t);
    double* rates[] = {&spec.missing_value, &spec.typo, &spec.pattern_violation, &spec.outlier, &spec.rule_violation};
    *rates[t] = 0.05;
    const auto res = inject_errors(clean, spec);
    EXPECT_EQ(res.log.size(), 30u);
    for (const auto& r : res.log) {
      EXPECT_EQ(static_cast<int>(r.type), t);
      EXPECT_NE(r.before, r.after);
      EXPECT_EQ(res.dirty.cell(r.row, r.col), r.after);
      if (r.type == ErrorType::missing_value) EXPECT_TRUE(r.after.empty());
    }
  }
}

TEST(Injection, RuleViolationsUseAnotherDomainValue) {
  const auto clean = synthetic_hospital(100, 6);
  InjectionSpec spec;
  spec.rule_violation = 0.03;
  spec.fds = {parse_fd("zip->city")};
  const auto res = inject_errors(clean, spec);
  const auto city = clean.attribute_index("city");
  const auto domain = clean.column(city);
  for (const auto& r : res.log) {
    EXPECT_EQ(r.col, city);
    EXPECT_NE(std::find(domain.begin(), domain.end(), r.after), domain.end());
  }
}

TEST(Injection, OutliersLeaveTheRange) {
  const auto clean = synthetic_hospital(100, 8);
  InjectionSpec spec;
  spec.outlier = 0.05;
  const auto res = inject_errors(clean, spec);
  for (const auto& r : res.log) {
    const auto col = clean.column(r.col);
    double lo = 1e300, hi = -1e300;
    for (const auto& v : col) {
      lo = std::min(lo, std::stod(v));
      hi = std::max(hi, std::stod(v));
    }
    const double x = std::stod(r.after);
    EXPECT_TRUE(x < lo || x > hi) << r.after;
  }
}

TEST(Injection, RejectsImpossibleSpecs) {
  const auto clean = synthetic_hospital(10, 1);
  EXPECT_THROW(inject_errors(clean, uniform_spec(1.5, {}, 0)), SpecError);
  InjectionSpec spec;
  spec.rule_violation = 0.1;
  EXPECT_THROW(inject_errors(clean, spec), SpecError);
  spec.fds = {parse_fd("zip->nope")};
  EXPECT_THROW(inject_errors(clean, spec), SpecError);
}

TEST(Injection, Deterministic) {
  const auto clean = synthetic_hospital(50, 3);
  const auto a = inject_errors(clean, uniform_spec(0.1, synthetic_fds(), 12));
  const auto b = inject_errors(clean, uniform_spec(0.1, synthetic_fds(), 12));
  EXPECT_TRUE(a.dirty == b.dirty);
  EXPECT_EQ(injection_log_to_csv(a.log), injection_log_to_csv(b.log));
}

TEST(Injection, TypoEditsOneOrTwoCharacters) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::string v = "birmingham";
    const auto t = typo_edit(v, s);
    ASSERT_EQ(t.size(), v.size());
    std::size_t diff = 0;
    for (std::size_t k = 0; k < v.size(); ++k) diff += v[k] != t[k];
    EXPECT_TRUE(diff == 1 || diff == 2) << t;
  }
}

TEST(Pearson, KnownValues) {
  EXPECT_NEAR(*pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-12);
  EXPECT_NEAR(*pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-12);
  EXPECT_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());
  EXPECT_FALSE(pearson({1}, {1}).has_value());
}

TEST(Annotator, AccuracyIsRoughlyPlanted) {
  ErrorMatrix truth(200, 10);
  for (std::size_t i = 0; i < 200; i += 7) truth.set(i, i % 10, true);
  const auto a = simulate_annotator(truth, 0.9, 3);
  std::size_t agree = 0;
  for (std::size_t c = 0; c < 2000; ++c) agree += a.data()[c] == truth.data()[c];
  EXPECT_NEAR(static_cast<double>(agree) / 2000.0, 0.9, 0.03);
}
