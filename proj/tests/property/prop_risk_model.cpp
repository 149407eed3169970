#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "cases.hpp"
#include "csrm/report.hpp"
#include "csrm/risk_model.hpp"
#include "random_docs.hpp"

using namespace csrm;

namespace {

std::vector<double> units(cases::Gen& g, int n) {
  std::vector<double> v(n);
  for (auto& x : v) x = g.unit_or_grid();
  return v;
}

}  // namespace

TEST(LevelProperty, BoundedByLikelihoodAndLargestImpact) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    int n = g.integer(1, 8);
    auto w = g.weights(n);
    auto imp = units(g, n);
    double L = g.unit_or_grid();
    double level = risk_level(L, w, imp);
    EXPECT_GE(level, 0.0);
    EXPECT_LE(level, 1.0);
    EXPECT_LE(level, L * (*std::max_element(imp.begin(), imp.end())) + 1e-12);
    EXPECT_GE(level, L * (*std::min_element(imp.begin(), imp.end())) - 1e-12);
  });
}

TEST(LevelProperty, MonotoneInLikelihoodAndEachImpact) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    int n = g.integer(1, 8);
    auto w = g.weights(n);
    auto imp = units(g, n);
    double L = g.unit_or_grid();
    double base = risk_level(L, w, imp);
    double L2 = g.range(L, 1.0);
    EXPECT_GE(risk_level(L2, w, imp), base);
    auto more = imp;
    int j = g.integer(0, n - 1);
    more[j] = g.range(imp[j], 1.0);
    EXPECT_GE(risk_level(L, w, more), base);
  });
}

TEST(LevelProperty, ZeroLikelihoodOrZeroImpactGivesZero) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    int n = g.integer(1, 8);
    auto w = g.weights(n);
    EXPECT_EQ(risk_level(0.0, w, units(g, n)), 0.0);
    EXPECT_EQ(risk_level(g.unit(), w, std::vector<double>(n, 0.0)), 0.0);
  });
}

TEST(CombinedReductionProperty, PermutationInvariantBitForBit) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto red = units(g, g.integer(0, 10));
    double a = combined_risk_reduction(red);
    std::shuffle(red.begin(), red.end(), g.engine());
    EXPECT_EQ(combined_risk_reduction(red), a);
  });
}

TEST(CombinedReductionProperty, BoundedAndMonotone) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto red = units(g, g.integer(0, 10));
    double a = combined_risk_reduction(red);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    if (!red.empty()) {
      EXPECT_GE(a, *std::max_element(red.begin(), red.end()) - 1e-15);
    }
    auto more = red;
    more.push_back(g.unit_or_grid());
    EXPECT_GE(combined_risk_reduction(more), a);
    if (!red.empty()) {
      auto stronger = red;
      int k = g.integer(0, static_cast<int>(red.size()) - 1);
      stronger[k] = g.range(red[k], 1.0);
      EXPECT_GE(combined_risk_reduction(stronger), a);
    }
  });
}

TEST(CombinedReductionProperty, FullReductionAbsorbs) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto red = units(g, g.integer(0, 10));
    red.insert(red.begin() + g.integer(0, static_cast<int>(red.size())), 1.0);
    EXPECT_EQ(combined_risk_reduction(red), 1.0);
  });
}

TEST(ResidualProperty, AlgebraicIdentity) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    double level = g.unit_or_grid();
    auto red = units(g, g.integer(0, 6));
    double crr = combined_risk_reduction(red);
    double residual = residual_level(level, crr);
    EXPECT_EQ(residual, level * (1.0 - crr));
    EXPECT_LE(residual, level);
    EXPECT_GE(residual, 0.0);
    double keep = 1.0;
    std::vector<double> sorted = red;
    std::sort(sorted.begin(), sorted.end());
    for (double r : sorted) keep *= 1.0 - r;
    EXPECT_NEAR(residual, level * keep, 1e-15);
  });
}

TEST(AggregateProperty, GlobalLevelAndReductionAreLinear) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto a = units(g, g.integer(0, 10));
    auto b = units(g, g.integer(0, 10));
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    EXPECT_NEAR(global_risk_level(ab), global_risk_level(a) + global_risk_level(b), 1e-12);
    EXPECT_NEAR(global_risk_reduction(ab), global_risk_reduction(a) + global_risk_reduction(b), 1e-12);
    double k = g.unit();
    auto scaled = a;
    for (auto& x : scaled) x *= k;
    EXPECT_NEAR(global_risk_level(scaled), k * global_risk_level(a), 1e-12);
  });
}

TEST(RoundingProperty, ModesNeverDisagreeOnClassification) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto profile = random_docs::profile(g, g.integer(1, 5));
    auto reg = random_docs::risks(g, profile.org_id, g.integer(1, 8));
    auto snap = assess(profile, reg, random_docs::impact(g, profile, reg));
    auto full = report::levels_table(snap, RoundingMode::full);
    auto paper = report::levels_table(snap, RoundingMode::paper_compat);
    EXPECT_EQ(full.notes, paper.notes);
    for (const auto& l : snap.levels) EXPECT_EQ(l.classification, classify(l.level, snap.alpha));
  });
}

TEST(RoundingProperty, HalfUpIsWithinHalfAUnit) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    double x = g.unit_or_grid();
    double r = round_half_up(x, 2);
    EXPECT_LE(std::abs(r - x), 0.005 + 1e-9);
    EXPECT_EQ(round_half_up(r, 2), r);
  });
}
