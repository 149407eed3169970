#pragma once

// Report tables: risk levels, reduction matrix, before/after treatment and
// monitoring diff, rendered as aligned text or comma-separated values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "csrm/csv.hpp"
#include "csrm/registry.hpp"
#include "csrm/rounding.hpp"
#include "csrm/treatment.hpp"

namespace csrm::report {

enum class Format { text, csv };

inline Format parse_format(std::string_view s) {
  if (s == "text") return Format::text;
  if (s == "csv") return Format::csv;
  throw Error(ErrorCode::invalid_argument, "unknown format '" + std::string(s) + "'");
}

struct Table {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> notes;  // printed after the table
};

struct ReportDocument {
  RoundingMode mode = RoundingMode::full;
  std::vector<Table> tables;
};

inline std::string render_table(const Table& t, Format format) {
  std::string out;
  if (format == Format::csv) {
    out += "# " + t.title + "\n";
    out += csv::join(t.header) + "\n";
    for (const auto& r : t.rows) out += csv::join(r) + "\n";
    for (const auto& n : t.notes) out += "# " + n + "\n";
    return out;
  }
  std::vector<std::size_t> width(t.header.size(), 0);
  auto measure = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  };
  measure(t.header);
  for (const auto& r : t.rows) measure(r);
  auto line = [&](const std::vector<std::string>& row) {
    std::string s;
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::string cell = row[i];
      if (i + 1 < row.size()) cell.resize(std::max(width[i], cell.size()), ' ');
      s += cell;
      if (i + 1 < row.size()) s += "  ";
    }
    return s + "\n";
  };
  out += t.title + "\n";
  out += line(t.header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  total += width.empty() ? 0 : 2 * (width.size() - 1);
  out += std::string(total, '-') + "\n";
  for (const auto& r : t.rows) out += line(r);
  for (const auto& n : t.notes) out += n + "\n";
  return out;
}

inline std::string render(const ReportDocument& doc, Format format, std::string_view header = {}) {
  std::string out;
  if (!header.empty()) out += "# " + std::string(header) + "\n";
  if (format == Format::csv) out += "# rounding: " + std::string(to_string(doc.mode)) + "\n";
  for (std::size_t i = 0; i < doc.tables.size(); ++i) {
    if (i || !out.empty()) out += "\n";
    out += render_table(doc.tables[i], format);
  }
  return out;
}

/// Percentage reduction of the displayed aggregates, 0 decimals.
inline std::string reduction_percent(double before, double after, RoundingMode mode) {
  double b = mode == RoundingMode::paper_compat ? round_half_up(before, 2) : before;
  double a = mode == RoundingMode::paper_compat ? round_half_up(after, 2) : after;
  if (!(b > 0.0)) return "n/a";
  return format_fixed(round_half_up((b - a) / b * 100.0, 0), 0) + "%";
}

inline Table levels_table(const AssessmentSnapshot& s, RoundingMode mode) {
  Table t;
  t.title = "Risk levels (" + s.org_id + ")";
  t.header = {"risk", "level"};
  std::vector<double> values;
  std::vector<std::string> unacceptable;
  for (const auto& l : s.levels) {
    t.rows.push_back({l.risk_id, format_value(l.level, mode)});
    values.push_back(l.level);
    if (l.classification == Classification::unacceptable) unacceptable.push_back(l.risk_id);
  }
  t.rows.push_back({"GRL", format_value(displayed_sum(values, mode), mode)});
  std::string list;
  for (const auto& id : unacceptable) list += (list.empty() ? "" : ", ") + id;
  t.notes.push_back("Unacceptable at alpha " + format_full(s.alpha) + ": " +
                    (list.empty() ? "none" : list));
  return t;
}

/// Selected countermeasures against the risks they treat, with the
/// combined reduction per risk in the last row.
inline Table reduction_table(const AppliedPlan& plan, RoundingMode mode) {
  Table t;
  t.title = "Risk reduction matrix";
  t.header = {"countermeasure"};
  std::vector<const RiskTreatment*> treated;
  for (const auto& r : plan.evaluation.risks) {
    if (r.treated) {
      treated.push_back(&r);
      t.header.push_back(r.risk_id);
    }
  }
  for (const auto& cm : plan.evaluation.plan.countermeasures) {
    std::vector<std::string> row{cm};
    for (const auto* r : treated) row.push_back(format_value(plan.reductions.at(cm, r->risk_id), mode));
    t.rows.push_back(std::move(row));
  }
  std::vector<std::string> crr{"CRR"};
  for (const auto* r : treated) crr.push_back(format_value(r->crr, mode));
  t.rows.push_back(std::move(crr));
  return t;
}

inline Table before_after_table(const PlanEvaluation& ev, RoundingMode mode) {
  Table t;
  t.title = "Risk levels before and after treatment";
  t.header = {"risk", "before", "after"};
  std::vector<double> before, after, crrs;
  for (const auto& r : ev.risks) {
    t.rows.push_back({r.risk_id, format_value(r.level, mode), format_value(r.residual, mode)});
    before.push_back(r.level);
    after.push_back(r.residual);
    if (r.treated) crrs.push_back(r.crr);
  }
  double grl_before = displayed_sum(before, mode);
  double grl_after = displayed_sum(after, mode);
  t.rows.push_back({"GRL", format_value(grl_before, mode), format_value(grl_after, mode)});
  std::string plan;
  for (const auto& id : ev.plan.countermeasures) plan += (plan.empty() ? "" : ",") + id;
  t.notes.push_back("Plan: " + (plan.empty() ? std::string("(none)") : plan) +
                    " (cost " + format_full(ev.plan.total_cost) + ")");
  t.notes.push_back("GRL reduction: " + reduction_percent(grl_before, grl_after, mode));
  t.notes.push_back("GRR: " + format_value(displayed_sum(crrs, mode), mode));
  std::string open;
  for (const auto& r : ev.risks) {
    if (r.after == Classification::unacceptable) open += (open.empty() ? "" : ", ") + r.risk_id;
  }
  t.notes.push_back(std::string("Feasible: ") + (ev.feasible ? "yes" : "no (unacceptable: " + open + ")"));
  return t;
}

inline Table monitoring_table(const MonitoringReport& m, RoundingMode mode) {
  Table t;
  t.title = "Monitoring (" + m.org_id + "): " + m.before_id + " -> " + m.after_id;
  t.header = {"risk", "before", "after", "delta"};
  for (const auto& d : m.deltas) {
    double delta = mode == RoundingMode::paper_compat
                       ? round_half_up(displayed(d.after, mode) - displayed(d.before, mode), 2)
                       : d.delta;
    t.rows.push_back({d.risk_id, format_value(d.before, mode), format_value(d.after, mode),
                      format_value(delta, mode)});
  }
  double gb = mode == RoundingMode::paper_compat ? displayed_sum(m.levels_before, mode) : m.grl_before;
  double ga = mode == RoundingMode::paper_compat ? displayed_sum(m.levels_after, mode) : m.grl_after;
  double gd = mode == RoundingMode::paper_compat ? round_half_up(ga - gb, 2) : m.grl_delta;
  t.rows.push_back({"GRL", format_value(gb, mode), format_value(ga, mode), format_value(gd, mode)});
  auto join = [](const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
    return s.empty() ? std::string("none") : s;
  };
  t.notes.push_back("Newly identified: " + join(m.added));
  t.notes.push_back("Retired: " + join(m.retired));
  std::vector<std::string> flips;
  for (const auto& f : m.flips) {
    flips.push_back(f.risk_id + " " + std::string(to_string(f.from)) + " -> " +
                    std::string(to_string(f.to)));
  }
  t.notes.push_back("Classification changes: " + join(flips));
  return t;
}

}  // namespace csrm::report
