#pragma once

// Countermeasure plan evaluation and selection. A plan is a set of
// countermeasure ids; its effect on each risk combines the selected level
// reductions multiplicatively and the plan is feasible when every residual
// level falls strictly below the tolerance.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csrm/error.hpp"
#include "csrm/risk_model.hpp"
#include "csrm/rounding.hpp"

namespace csrm {

inline constexpr double default_countermeasure_cost = 1.0;
inline constexpr std::size_t default_exact_cap = 20;

/// Countermeasure x risk table of level reductions (0 where inapplicable).
class ReductionMatrix {
 public:
  ReductionMatrix() = default;

  ReductionMatrix(std::vector<std::string> countermeasure_ids, std::vector<std::string> risk_ids,
                  std::vector<double> values)
      : countermeasure_ids_(std::move(countermeasure_ids)),
        risk_ids_(std::move(risk_ids)),
        values_(std::move(values)) {
    if (values_.size() != countermeasure_ids_.size() * risk_ids_.size()) {
      throw Error(ErrorCode::structural, "reduction matrix is not dense");
    }
    for (std::size_t i = 0; i < countermeasure_ids_.size(); ++i) {
      if (!cm_index_.emplace(countermeasure_ids_[i], i).second) {
        throw Error(ErrorCode::structural, "duplicate countermeasure " + countermeasure_ids_[i],
                    {countermeasure_ids_[i]});
      }
    }
    for (std::size_t i = 0; i < risk_ids_.size(); ++i) {
      if (!risk_index_.emplace(risk_ids_[i], i).second) {
        throw Error(ErrorCode::structural, "duplicate risk column " + risk_ids_[i], {risk_ids_[i]});
      }
    }
    for (std::size_t c = 0; c < countermeasure_ids_.size(); ++c) {
      for (std::size_t r = 0; r < risk_ids_.size(); ++r) {
        if (!detail::in_unit_interval(values_[c * risk_ids_.size() + r])) {
          std::string cell = "(" + countermeasure_ids_[c] + "," + risk_ids_[r] + ")";
          throw Error(ErrorCode::out_of_range, "level reduction " + cell + " outside [0,1]", {cell});
        }
      }
    }
  }

  const std::vector<std::string>& countermeasure_ids() const noexcept { return countermeasure_ids_; }
  const std::vector<std::string>& risk_ids() const noexcept { return risk_ids_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool has_countermeasure(const std::string& id) const { return cm_index_.contains(id); }
  bool has_risk(const std::string& id) const { return risk_index_.contains(id); }

  double at(const std::string& countermeasure, const std::string& risk) const {
    auto c = cm_index_.find(countermeasure);
    auto r = risk_index_.find(risk);
    if (c == cm_index_.end()) {
      throw Error(ErrorCode::not_found, "unknown countermeasure " + countermeasure, {countermeasure});
    }
    if (r == risk_index_.end()) {
      throw Error(ErrorCode::structural, "reduction matrix has no column for risk " + risk, {risk});
    }
    return values_[c->second * risk_ids_.size() + r->second];
  }

  friend bool operator==(const ReductionMatrix& a, const ReductionMatrix& b) {
    return a.countermeasure_ids_ == b.countermeasure_ids_ && a.risk_ids_ == b.risk_ids_ &&
           a.values_ == b.values_;
  }

 private:
  std::vector<std::string> countermeasure_ids_;
  std::vector<std::string> risk_ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> cm_index_;
  std::unordered_map<std::string, std::size_t> risk_index_;
};

struct LeveledRisk {
  std::string id;
  double level = 0.0;

  friend bool operator==(const LeveledRisk&, const LeveledRisk&) = default;
};

/// Everything a plan is evaluated against.
struct TreatmentProblem {
  std::vector<LeveledRisk> levels;
  ReductionMatrix reductions;
  std::map<std::string, double> costs;  // absent -> default_countermeasure_cost
  double alpha = 0.0;

  double cost_of(const std::string& id) const {
    auto it = costs.find(id);
    return it == costs.end() ? default_countermeasure_cost : it->second;
  }
};

struct TreatmentPlan {
  std::vector<std::string> countermeasures;  // sorted, unique
  double total_cost = 0.0;

  friend bool operator==(const TreatmentPlan&, const TreatmentPlan&) = default;
};

struct RiskTreatment {
  std::string risk_id;
  double level = 0.0;
  double crr = 0.0;
  double residual = 0.0;
  bool treated = false;  // at least one selected countermeasure applies
  Classification before = Classification::acceptable;
  Classification after = Classification::acceptable;

  friend bool operator==(const RiskTreatment&, const RiskTreatment&) = default;
};

struct PlanEvaluation {
  TreatmentPlan plan;
  std::vector<RiskTreatment> risks;
  double alpha = 0.0;
  double grl_before = 0.0;
  double grl_after = 0.0;
  double grr = 0.0;
  bool feasible = false;
  RoundingMode rounding = RoundingMode::full;

  friend bool operator==(const PlanEvaluation&, const PlanEvaluation&) = default;
};

enum class OptimizeMode { exact, greedy };

inline OptimizeMode parse_optimize_mode(std::string_view s) {
  if (s == "exact") return OptimizeMode::exact;
  if (s == "greedy") return OptimizeMode::greedy;
  throw Error(ErrorCode::invalid_argument, "unknown optimize mode '" + std::string(s) + "'");
}

struct OptimizeOptions {
  OptimizeMode mode = OptimizeMode::exact;
  std::size_t exact_cap = default_exact_cap;
};

namespace detail {

inline void validate_problem(const TreatmentProblem& p) {
  require_unit(p.alpha, "tolerance");
  for (const auto& r : p.levels) {
    require_unit(r.level, "risk level");
    if (!p.reductions.has_risk(r.id)) {
      throw Error(ErrorCode::structural, "reduction matrix has no column for risk " + r.id, {r.id});
    }
  }
  for (const auto& [id, cost] : p.costs) {
    if (!(cost >= 0.0)) throw Error(ErrorCode::out_of_range, "negative cost for " + id, {id});
  }
}

inline std::vector<std::string> canonical_plan(std::vector<std::string> ids,
                                               const ReductionMatrix& m) {
  std::sort(ids.begin(), ids.end());
  if (auto dup = std::adjacent_find(ids.begin(), ids.end()); dup != ids.end()) {
    throw Error(ErrorCode::invalid_argument, "countermeasure " + *dup + " listed twice", {*dup});
  }
  for (const auto& id : ids) {
    if (!m.has_countermeasure(id)) {
      throw Error(ErrorCode::not_found, "unknown countermeasure " + id, {id});
    }
  }
  return ids;
}

}  // namespace detail

/// Evaluates `plan` (any order) against the problem. Costs are summed in
/// id order.
inline PlanEvaluation evaluate_plan(const TreatmentProblem& problem,
                                    std::vector<std::string> plan,
                                    RoundingMode rounding = RoundingMode::full) {
  detail::validate_problem(problem);
  PlanEvaluation ev;
  ev.plan.countermeasures = detail::canonical_plan(std::move(plan), problem.reductions);
  for (const auto& id : ev.plan.countermeasures) ev.plan.total_cost += problem.cost_of(id);
  ev.alpha = problem.alpha;
  ev.rounding = rounding;
  ev.feasible = true;
  std::vector<double> before, after, crrs;
  for (const auto& risk : problem.levels) {
    RiskTreatment t;
    t.risk_id = risk.id;
    t.level = risk.level;
    std::vector<double> applied;
    for (const auto& cm : ev.plan.countermeasures) {
      double red = problem.reductions.at(cm, risk.id);
      if (red > 0.0) applied.push_back(red);
    }
    t.treated = !applied.empty();
    t.crr = combined_risk_reduction(applied);
    t.residual = residual_level(risk.level, t.crr);
    t.before = classify(t.level, problem.alpha);
    t.after = classify(t.residual, problem.alpha);
    ev.feasible = ev.feasible && t.after == Classification::acceptable;
    before.push_back(t.level);
    after.push_back(t.residual);
    if (t.treated) crrs.push_back(t.crr);
    ev.risks.push_back(std::move(t));
  }
  ev.grl_before = global_risk_level(before);
  ev.grl_after = global_risk_level(after);
  ev.grr = global_risk_reduction(crrs);
  return ev;
}

/// Re-evaluates with `toggle` added to or removed from the current plan.
inline PlanEvaluation what_if(const TreatmentProblem& problem, const PlanEvaluation& current,
                              const std::string& toggle) {
  if (!problem.reductions.has_countermeasure(toggle)) {
    throw Error(ErrorCode::not_found, "unknown countermeasure " + toggle, {toggle});
  }
  std::vector<std::string> plan = current.plan.countermeasures;
  auto it = std::find(plan.begin(), plan.end(), toggle);
  if (it == plan.end()) {
    plan.push_back(toggle);
  } else {
    plan.erase(it);
  }
  return evaluate_plan(problem, std::move(plan), current.rounding);
}

/// Countermeasures that reduce at least one currently unacceptable risk,
/// in id order.
inline std::vector<std::string> applicable_countermeasures(const TreatmentProblem& problem) {
  std::vector<std::string> out;
  for (const auto& cm : problem.reductions.countermeasure_ids()) {
    for (const auto& r : problem.levels) {
      if (classify(r.level, problem.alpha) == Classification::unacceptable &&
          problem.reductions.at(cm, r.id) > 0.0) {
        out.push_back(cm);
        break;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

/// (cost, cardinality, lexicographic ids) ordering used to break ties.
inline bool plan_better(double cost, const std::vector<std::string>& ids, double best_cost,
                        const std::vector<std::string>& best_ids) {
  if (cost != best_cost) return cost < best_cost;
  if (ids.size() != best_ids.size()) return ids.size() < best_ids.size();
  return ids < best_ids;
}

// Depth-first branch and bound over id-ordered candidate subsets. A node is
// pruned when it cannot beat the incumbent on (cost, cardinality) or when
// adding every remaining candidate still leaves some risk at or above the
// tolerance. Feasibility of a node is always decided by evaluate_plan so
// the search agrees with plain evaluation at the boundary.
class ExactSearch {
 public:
  ExactSearch(const TreatmentProblem& problem, std::vector<std::string> candidates)
      : problem_(problem), candidates_(std::move(candidates)) {
    const std::size_t n = candidates_.size();
    for (const auto& r : problem_.levels) {
      if (classify(r.level, problem_.alpha) == Classification::acceptable) continue;
      Target t;
      t.level = r.level;
      t.keep.resize(n);
      t.suffix_keep.assign(n + 1, 1.0);
      for (std::size_t k = 0; k < n; ++k) t.keep[k] = 1.0 - problem_.reductions.at(candidates_[k], r.id);
      for (std::size_t k = n; k-- > 0;) t.suffix_keep[k] = t.suffix_keep[k + 1] * t.keep[k];
      targets_.push_back(std::move(t));
    }
  }

  bool run() {
    std::vector<double> keep(targets_.size(), 1.0);
    std::vector<std::string> chosen;
    visit(0, chosen, 0.0, keep);
    return found_;
  }

  const std::vector<std::string>& best() const { return best_ids_; }

 private:
  struct Target {
    double level = 0.0;
    std::vector<double> keep;
    std::vector<double> suffix_keep;
  };

  bool can_still_succeed(std::size_t next, const std::vector<double>& keep) const {
    for (std::size_t i = 0; i < targets_.size(); ++i) {
      double optimistic = targets_[i].level * keep[i] * targets_[i].suffix_keep[next];
      if (optimistic > problem_.alpha * (1.0 + 1e-9) + 1e-15) return false;
    }
    return true;
  }

  void visit(std::size_t next, std::vector<std::string>& chosen, double cost,
             std::vector<double>& keep) {
    bool maybe_clear = true;
    for (std::size_t i = 0; i < targets_.size() && maybe_clear; ++i) {
      maybe_clear = targets_[i].level * keep[i] < problem_.alpha * (1.0 + 1e-9) + 1e-15;
    }
    if (maybe_clear && evaluate_plan(problem_, chosen).feasible) {
      if (!found_ || plan_better(cost, chosen, best_cost_, best_ids_)) {
        found_ = true;
        best_cost_ = cost;
        best_ids_ = chosen;
      }
      return;  // supersets cost at least as much and are larger
    }
    if (!can_still_succeed(next, keep)) return;
    for (std::size_t k = next; k < candidates_.size(); ++k) {
      double child_cost = cost + problem_.cost_of(candidates_[k]);
      if (found_ && (child_cost > best_cost_ ||
                     (child_cost == best_cost_ && chosen.size() + 1 > best_ids_.size()))) {
        continue;
      }
      std::vector<double> saved = keep;
      for (std::size_t i = 0; i < targets_.size(); ++i) keep[i] *= targets_[i].keep[k];
      chosen.push_back(candidates_[k]);
      visit(k + 1, chosen, child_cost, keep);
      chosen.pop_back();
      keep = std::move(saved);
    }
  }

  const TreatmentProblem& problem_;
  std::vector<std::string> candidates_;
  std::vector<Target> targets_;
  bool found_ = false;
  double best_cost_ = std::numeric_limits<double>::infinity();
  std::vector<std::string> best_ids_;
};

inline std::vector<std::string> greedy_select(const TreatmentProblem& problem) {
  std::vector<std::string> plan;
  PlanEvaluation current = evaluate_plan(problem, plan);
  std::vector<std::string> pool = problem.reductions.countermeasure_ids();
  std::sort(pool.begin(), pool.end());
  while (!current.feasible) {
    const std::string* best = nullptr;
    double best_score = 0.0;
    double best_gain = 0.0;
    PlanEvaluation best_eval;
    for (const auto& cm : pool) {
      if (std::find(plan.begin(), plan.end(), cm) != plan.end()) continue;
      std::vector<std::string> trial = plan;
      trial.push_back(cm);
      PlanEvaluation ev = evaluate_plan(problem, trial);
      double gain = current.grl_after - ev.grl_after;
      if (!(gain > 0.0)) continue;
      double cost = problem.cost_of(cm);
      double score = cost > 0.0 ? gain / cost : std::numeric_limits<double>::infinity();
      if (best == nullptr || score > best_score) {  // pool is id-ordered: ties keep the smaller id
        best = &cm;
        best_score = score;
        best_gain = gain;
        best_eval = std::move(ev);
      }
    }
    if (best == nullptr || !(best_gain > 0.0)) break;
    plan.push_back(*best);
    current = std::move(best_eval);
  }
  return plan;
}

}  // namespace detail

struct OptimizedPlan {
  TreatmentPlan plan;
  PlanEvaluation evaluation;
  OptimizeMode mode = OptimizeMode::exact;
};

/// Cheapest feasible plan (exact) or a cost-weighted greedy approximation.
/// When no plan is feasible, returns every applicable countermeasure with
/// the evaluation flagged infeasible.
inline OptimizedPlan optimize_plan(const TreatmentProblem& problem, OptimizeOptions options = {},
                                   RoundingMode rounding = RoundingMode::full) {
  detail::validate_problem(problem);
  std::vector<std::string> selected;
  bool found = false;
  if (options.mode == OptimizeMode::exact) {
    if (problem.reductions.countermeasure_ids().size() > options.exact_cap) {
      throw Error(ErrorCode::invalid_argument,
                  "exact mode supports at most " + std::to_string(options.exact_cap) +
                      " countermeasures; use greedy");
    }
    detail::ExactSearch search(problem, applicable_countermeasures(problem));
    found = search.run();
    selected = search.best();
  } else {
    selected = detail::greedy_select(problem);
    found = evaluate_plan(problem, selected).feasible;
  }
  if (!found) selected = applicable_countermeasures(problem);
  OptimizedPlan out;
  out.mode = options.mode;
  out.evaluation = evaluate_plan(problem, selected, rounding);
  out.plan = out.evaluation.plan;
  return out;
}

}  // namespace csrm
