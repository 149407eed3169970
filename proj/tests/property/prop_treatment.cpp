#include <gtest/gtest.h>

#include <vector>

#include "cases.hpp"
#include "csrm/treatment.hpp"
#include "oracle.hpp"
#include "random_docs.hpp"

using namespace csrm;

namespace {

TreatmentProblem random_problem(cases::Gen& g) {
  int n_risks = g.integer(1, 8);
  int n_cms = g.integer(1, 12);
  TreatmentProblem p;
  std::vector<std::string> rids;
  for (int i = 0; i < n_risks; ++i) {
    rids.push_back("r" + std::to_string(i + 1));
    p.levels.push_back({rids.back(), g.unit_or_grid()});
  }
  p.reductions = random_docs::reductions(g, n_cms, rids, g.range(0.2, 0.7));
  p.alpha = g.coin(0.2) ? g.integer(0, 20) * 0.05 : g.range(0.05, 0.6);
  if (!g.coin(0.3)) {
    for (const auto& id : p.reductions.countermeasure_ids()) {
      // Quarter steps make equal-cost alternatives common.
      p.costs[id] = g.coin(0.1) ? 0.0 : g.integer(1, 12) * 0.25;
    }
  }
  return p;
}

}  // namespace

TEST(OptimizerProperty, ExactMatchesSubsetEnumeration) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto p = random_problem(g);
    auto exact = optimize_plan(p, {OptimizeMode::exact});
    auto brute = oracle::cheapest_feasible_plan(p);
    ASSERT_EQ(exact.evaluation.feasible, brute.feasible);
    if (brute.feasible) {
      EXPECT_EQ(exact.plan.total_cost, brute.cost);
      EXPECT_EQ(exact.plan.countermeasures, brute.ids);
    } else {
      EXPECT_EQ(exact.plan.countermeasures, applicable_countermeasures(p));
    }
  });
}

TEST(OptimizerProperty, GreedyIsFeasibleWheneverExactIsAndNeverCheaper) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto p = random_problem(g);
    auto exact = optimize_plan(p, {OptimizeMode::exact});
    auto greedy = optimize_plan(p, {OptimizeMode::greedy});
    if (exact.evaluation.feasible) {
      EXPECT_TRUE(greedy.evaluation.feasible);
      EXPECT_GE(greedy.plan.total_cost, exact.plan.total_cost);
    }
  });
}

TEST(OptimizerProperty, WhatIfEqualsEvaluatingTheToggledPlan) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto p = random_problem(g);
    const auto& ids = p.reductions.countermeasure_ids();
    std::vector<std::string> plan;
    for (const auto& id : ids) {
      if (g.coin()) plan.push_back(id);
    }
    auto current = evaluate_plan(p, plan);
    const auto& toggle = ids[g.integer(0, static_cast<int>(ids.size()) - 1)];
    auto next = what_if(p, current, toggle);
    auto toggled = plan;
    auto it = std::find(toggled.begin(), toggled.end(), toggle);
    if (it == toggled.end()) {
      toggled.push_back(toggle);
    } else {
      toggled.erase(it);
    }
    EXPECT_EQ(next, evaluate_plan(p, toggled));
    EXPECT_EQ(what_if(p, next, toggle), current);
  });
}

TEST(OptimizerProperty, AddingACountermeasureNeverRaisesResiduals) {
  cases::for_cases(cases::default_count, [](cases::Gen& g, int) {
    auto p = random_problem(g);
    const auto& ids = p.reductions.countermeasure_ids();
    std::vector<std::string> plan;
    for (const auto& id : ids) {
      if (g.coin(0.3)) plan.push_back(id);
    }
    auto before = evaluate_plan(p, plan);
    for (const auto& id : ids) {
      if (std::find(plan.begin(), plan.end(), id) != plan.end()) continue;
      auto more = plan;
      more.push_back(id);
      auto after = evaluate_plan(p, more);
      for (std::size_t i = 0; i < after.risks.size(); ++i) {
        EXPECT_LE(after.risks[i].residual, before.risks[i].residual);
      }
      EXPECT_LE(after.grl_after, before.grl_after + 1e-12);
      break;
    }
  });
}
