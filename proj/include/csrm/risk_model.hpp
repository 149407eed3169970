#pragma once

// Quantitative risk arithmetic: weighted-impact risk levels, global risk
// level, tolerance classification and multiplicative combination of
// countermeasure reductions. Everything here is a pure function.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csrm/error.hpp"

namespace csrm {

inline constexpr double weight_sum_tolerance = 1e-9;

struct Objective {
  std::string id;
  std::string name;
  double weight = 0.0;

  friend bool operator==(const Objective&, const Objective&) = default;
};

using ObjectiveSet = std::vector<Objective>;

struct RiskRecord {
  std::string id;
  std::string name;
  double likelihood = 0.0;
  std::vector<std::string> tags;

  friend bool operator==(const RiskRecord&, const RiskRecord&) = default;
};

enum class Classification { acceptable, unacceptable };

inline constexpr std::string_view to_string(Classification c) noexcept {
  return c == Classification::acceptable ? "acceptable" : "unacceptable";
}

struct RiskLevelResult {
  std::string risk_id;
  double level = 0.0;
  Classification classification = Classification::acceptable;

  friend bool operator==(const RiskLevelResult&, const RiskLevelResult&) = default;
};

namespace detail {

inline bool in_unit_interval(double x) noexcept {
  return x >= 0.0 && x <= 1.0;  // false for NaN
}

inline void require_unit(double x, std::string_view what) {
  if (!in_unit_interval(x)) {
    throw Error(ErrorCode::out_of_range,
                std::string(what) + " must lie in [0,1], got " + std::to_string(x),
                {std::string(what)});
  }
}

}  // namespace detail

/// Dense risk x objective impact table. Rows and columns are addressed by
/// caller-supplied ids; every cell must be present.
class ImpactMatrix {
 public:
  ImpactMatrix() = default;

  ImpactMatrix(std::vector<std::string> risk_ids, std::vector<std::string> objective_ids,
               std::vector<double> values)
      : risk_ids_(std::move(risk_ids)),
        objective_ids_(std::move(objective_ids)),
        values_(std::move(values)) {
    if (values_.size() != risk_ids_.size() * objective_ids_.size()) {
      throw Error(ErrorCode::structural, "impact matrix is not dense");
    }
    index(risk_ids_, risk_index_, "risk");
    index(objective_ids_, objective_index_, "objective");
    for (std::size_t r = 0; r < risk_ids_.size(); ++r) {
      for (std::size_t o = 0; o < objective_ids_.size(); ++o) {
        double v = values_[r * objective_ids_.size() + o];
        if (!detail::in_unit_interval(v)) {
          throw Error(ErrorCode::out_of_range,
                      "impact (" + risk_ids_[r] + "," + objective_ids_[o] +
                          ") outside [0,1]",
                      {"(" + risk_ids_[r] + "," + objective_ids_[o] + ")"});
        }
      }
    }
  }

  const std::vector<std::string>& risk_ids() const noexcept { return risk_ids_; }
  const std::vector<std::string>& objective_ids() const noexcept { return objective_ids_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool has_risk(const std::string& id) const { return risk_index_.contains(id); }

  std::span<const double> row(const std::string& risk_id) const {
    auto it = risk_index_.find(risk_id);
    if (it == risk_index_.end()) {
      throw Error(ErrorCode::structural, "impact matrix has no row for risk " + risk_id,
                  {risk_id});
    }
    return std::span<const double>(values_).subspan(it->second * objective_ids_.size(),
                                                    objective_ids_.size());
  }

  double at(const std::string& risk_id, const std::string& objective_id) const {
    auto it = objective_index_.find(objective_id);
    if (it == objective_index_.end()) {
      throw Error(ErrorCode::structural,
                  "impact matrix has no column for objective " + objective_id,
                  {objective_id});
    }
    return row(risk_id)[it->second];
  }

  friend bool operator==(const ImpactMatrix& a, const ImpactMatrix& b) {
    return a.risk_ids_ == b.risk_ids_ && a.objective_ids_ == b.objective_ids_ &&
           a.values_ == b.values_;
  }

 private:
  static void index(const std::vector<std::string>& ids,
                    std::unordered_map<std::string, std::size_t>& out,
                    std::string_view axis) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!out.emplace(ids[i], i).second) {
        throw Error(ErrorCode::structural,
                    "duplicate " + std::string(axis) + " id " + ids[i] + " in impact matrix",
                    {ids[i]});
      }
    }
  }

  std::vector<std::string> risk_ids_;
  std::vector<std::string> objective_ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> risk_index_;
  std::unordered_map<std::string, std::size_t> objective_index_;
};

struct WeightReport {
  bool ok = true;
  double sum = 0.0;
  std::vector<std::string> offending;  // ids with weight outside [0,1]
};

inline WeightReport validate_weights(const ObjectiveSet& objectives) {
  if (objectives.empty()) {
    throw Error(ErrorCode::empty_input, "objective set is empty");
  }
  WeightReport report;
  for (const auto& o : objectives) {
    report.sum += o.weight;
    if (!detail::in_unit_interval(o.weight)) report.offending.push_back(o.id);
  }
  report.ok = report.offending.empty() &&
              std::abs(report.sum - 1.0) <= weight_sum_tolerance;
  return report;
}

/// Throws a schema error carrying the weight diagnostic unless the set is valid.
inline void require_valid_weights(const ObjectiveSet& objectives) {
  WeightReport report = validate_weights(objectives);
  if (report.ok) return;
  std::vector<std::string> details = report.offending;
  details.push_back("sum=" + std::to_string(report.sum));
  std::string msg = "objective weights invalid: sum " + std::to_string(report.sum);
  if (!report.offending.empty()) msg += ", weights outside [0,1] for " + report.offending.front();
  throw Error(ErrorCode::schema, msg, std::move(details));
}

inline ObjectiveSet renormalize_weights(ObjectiveSet objectives) {
  double sum = 0.0;
  for (const auto& o : objectives) sum += o.weight;
  if (!(sum > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "cannot renormalize weights summing to zero");
  }
  for (auto& o : objectives) o.weight /= sum;
  return objectives;
}

/// likelihood * sum_j weight_j * impact_j; `weights` and `impacts` are aligned.
inline double risk_level(double likelihood, std::span<const double> weights,
                         std::span<const double> impacts) {
  if (weights.size() != impacts.size()) {
    throw Error(ErrorCode::structural, "impact row does not cover every objective exactly once");
  }
  detail::require_unit(likelihood, "likelihood");
  double weighted = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    detail::require_unit(impacts[j], "impact");
    weighted += weights[j] * impacts[j];
  }
  return std::clamp(likelihood * weighted, 0.0, 1.0);
}

/// Level of `risk` with its impacts taken from `matrix`; the matrix columns
/// must be exactly the objective ids.
inline double risk_level(const RiskRecord& risk, const ObjectiveSet& objectives,
                         const ImpactMatrix& matrix) {
  std::vector<double> weights;
  std::vector<double> impacts;
  weights.reserve(objectives.size());
  impacts.reserve(objectives.size());
  if (matrix.objective_ids().size() != objectives.size()) {
    throw Error(ErrorCode::structural,
                "impact row for " + risk.id + " does not cover every objective exactly once",
                {risk.id});
  }
  for (const auto& o : objectives) {
    weights.push_back(o.weight);
    impacts.push_back(matrix.at(risk.id, o.id));
  }
  return risk_level(risk.likelihood, weights, impacts);
}

inline double global_risk_level(std::span<const double> levels) noexcept {
  double sum = 0.0;
  for (double l : levels) sum += l;
  return sum;
}

/// Strict: a level equal to alpha is unacceptable.
inline constexpr Classification classify(double level, double alpha) noexcept {
  return level < alpha ? Classification::acceptable : Classification::unacceptable;
}

/// 1 - prod_k (1 - reduction_k). The product is accumulated over the
/// ascending-sorted factors so the result is bit-identical under any
/// permutation of the input.
inline double combined_risk_reduction(std::span<const double> reductions) {
  std::vector<double> sorted(reductions.begin(), reductions.end());
  std::sort(sorted.begin(), sorted.end());
  double remaining = 1.0;
  for (double r : sorted) {
    detail::require_unit(r, "level reduction");
    remaining *= 1.0 - r;
  }
  return 1.0 - remaining;
}

inline double residual_level(double level, double crr) {
  detail::require_unit(level, "risk level");
  detail::require_unit(crr, "combined risk reduction");
  return level * (1.0 - crr);
}

inline double global_risk_reduction(std::span<const double> crrs) noexcept {
  double sum = 0.0;
  for (double c : crrs) sum += c;
  return sum;
}

/// Checks that the matrix rows are exactly the risk ids and the columns
/// exactly the objective ids (order-insensitive, no extras, no gaps).
inline void require_matrix_covers(const std::vector<RiskRecord>& risks,
                                  const ObjectiveSet& objectives, const ImpactMatrix& matrix) {
  std::vector<std::string> problems;
  std::vector<std::string> want_rows, want_cols;
  for (const auto& r : risks) want_rows.push_back(r.id);
  for (const auto& o : objectives) want_cols.push_back(o.id);
  auto compare = [&](std::vector<std::string> want, std::vector<std::string> have,
                     std::string_view axis) {
    std::sort(want.begin(), want.end());
    std::sort(have.begin(), have.end());
    std::vector<std::string> missing, extra;
    std::set_difference(want.begin(), want.end(), have.begin(), have.end(),
                        std::back_inserter(missing));
    std::set_difference(have.begin(), have.end(), want.begin(), want.end(),
                        std::back_inserter(extra));
    for (const auto& m : missing) problems.push_back("missing " + std::string(axis) + " " + m);
    for (const auto& e : extra) problems.push_back("unknown " + std::string(axis) + " " + e);
  };
  compare(want_rows, matrix.risk_ids(), "risk");
  compare(want_cols, matrix.objective_ids(), "objective");
  if (!problems.empty()) {
    std::string msg = "impact matrix does not match register: " + problems.front();
    throw Error(ErrorCode::structural, msg, std::move(problems));
  }
}

/// Levels and classifications for every risk, in register order.
inline std::vector<RiskLevelResult> evaluate_risks(const std::vector<RiskRecord>& risks,
                                                   const ObjectiveSet& objectives,
                                                   const ImpactMatrix& matrix, double alpha) {
  require_valid_weights(objectives);
  detail::require_unit(alpha, "tolerance");
  require_matrix_covers(risks, objectives, matrix);
  std::vector<RiskLevelResult> out;
  out.reserve(risks.size());
  for (const auto& r : risks) {
    double level = risk_level(r, objectives, matrix);
    out.push_back({r.id, level, classify(level, alpha)});
  }
  return out;
}

}  // namespace csrm
