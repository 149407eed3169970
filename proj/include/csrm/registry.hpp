#pragma once

// Organization profiles, risk registers, countermeasure catalogs and
// assessment snapshots: their document schemas, table importers, and the
// monitoring diff between two snapshots.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "csrm/csv.hpp"
#include "csrm/delphi.hpp"
#include "csrm/error.hpp"
#include "csrm/json_io.hpp"
#include "csrm/risk_model.hpp"
#include "csrm/treatment.hpp"

namespace csrm {

inline constexpr const char* profile_format = "csrm.profile/1";
inline constexpr const char* register_format = "csrm.risk-register/1";
inline constexpr const char* catalog_format = "csrm.catalog/1";
inline constexpr const char* session_format = "csrm.delphi-session/1";
inline constexpr const char* snapshot_format = "csrm.snapshot/1";
inline constexpr const char* estimates_format = "csrm.estimates/1";

// ---------------------------------------------------------------------------
// Documents

struct SecurityRequirement {
  std::string attribute;
  std::string level;  // low | medium | high

  friend bool operator==(const SecurityRequirement&, const SecurityRequirement&) = default;
};

struct OrganizationProfile {
  std::string org_id;
  std::string name;
  std::int64_t version = 0;
  ObjectiveSet objectives;
  std::vector<SecurityRequirement> security_requirements;
  double tolerance = 0.0;

  friend bool operator==(const OrganizationProfile&, const OrganizationProfile&) = default;
};

struct RiskRegister {
  std::string org_id;
  std::int64_t version = 0;
  std::vector<RiskRecord> risks;

  friend bool operator==(const RiskRegister&, const RiskRegister&) = default;
};

struct CountermeasureRecord {
  std::string id;
  std::string name;
  std::vector<std::string> tags;
  double cost = default_countermeasure_cost;
  std::string provenance;

  friend bool operator==(const CountermeasureRecord&, const CountermeasureRecord&) = default;
};

struct CountermeasureCatalog {
  std::vector<CountermeasureRecord> records;

  const CountermeasureRecord* find(const std::string& id) const {
    for (const auto& r : records) {
      if (r.id == id) return &r;
    }
    return nullptr;
  }

  std::map<std::string, double> costs() const {
    std::map<std::string, double> out;
    for (const auto& r : records) out[r.id] = r.cost;
    return out;
  }

  friend bool operator==(const CountermeasureCatalog&, const CountermeasureCatalog&) = default;
};

namespace detail {

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// Records whose tags intersect `tags` (case-insensitive), ordered by id.
inline std::vector<CountermeasureRecord> catalog_lookup(const CountermeasureCatalog& catalog,
                                                        const std::vector<std::string>& tags) {
  std::set<std::string> wanted;
  for (const auto& t : tags) wanted.insert(detail::lower(t));
  std::vector<CountermeasureRecord> out;
  for (const auto& r : catalog.records) {
    bool hit = std::any_of(r.tags.begin(), r.tags.end(),
                           [&](const std::string& t) { return wanted.contains(detail::lower(t)); });
    if (hit) out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

// ---------------------------------------------------------------------------
// JSON documents

inline json to_document(const OrganizationProfile& p) {
  json reqs = json::array();
  for (const auto& r : p.security_requirements) {
    reqs.push_back({{"attribute", r.attribute}, {"level", r.level}});
  }
  return json{{"format", profile_format},
              {"org_id", p.org_id},
              {"name", p.name},
              {"version", p.version},
              {"objectives", p.objectives},
              {"security_requirements", reqs},
              {"tolerance", p.tolerance}};
}

namespace detail {

template <typename Fn>
void for_each_object(const FieldReader& f, const char* key, Fn&& fn) {
  const json& arr = f.array(key);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    fn(FieldReader(arr[i], f.child(key) + "[" + std::to_string(i) + "]"));
  }
}

inline void require_unique_ids(const std::vector<std::string>& ids, const std::string& path) {
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (id.empty()) FieldReader::fail(path, "empty id");
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::schema, path + ": duplicate id " + id, {path, id});
    }
  }
}

}  // namespace detail

inline OrganizationProfile profile_from_document(const json& doc) {
  require_format(doc, profile_format);
  FieldReader f(doc, "");
  OrganizationProfile p;
  p.org_id = f.string("org_id");
  p.name = f.string_or("name", "");
  p.version = f.integer_or("version", 0);
  detail::for_each_object(f, "objectives", [&](const FieldReader& o) {
    p.objectives.push_back(read_objective(o));
  });
  if (p.objectives.empty()) {
    throw Error(ErrorCode::empty_input, "objectives: at least one objective required",
                {"objectives"});
  }
  std::vector<std::string> ids;
  for (const auto& o : p.objectives) ids.push_back(o.id);
  detail::require_unique_ids(ids, "objectives");
  if (f.has("security_requirements")) {
    detail::for_each_object(f, "security_requirements", [&](const FieldReader& r) {
      std::string level = r.string("level");
      if (level != "low" && level != "medium" && level != "high") {
        FieldReader::fail(r.child("level"), "expected low|medium|high");
      }
      p.security_requirements.push_back({r.string("attribute"), level});
    });
  }
  p.tolerance = f.unit("tolerance");
  require_valid_weights(p.objectives);
  return p;
}

inline json to_document(const RiskRegister& r) {
  return json{{"format", register_format},
              {"org_id", r.org_id},
              {"version", r.version},
              {"risks", r.risks}};
}

inline RiskRegister register_from_document(const json& doc) {
  require_format(doc, register_format);
  FieldReader f(doc, "");
  RiskRegister r;
  r.org_id = f.string("org_id");
  r.version = f.integer_or("version", 0);
  detail::for_each_object(f, "risks", [&](const FieldReader& x) { r.risks.push_back(read_risk(x)); });
  std::vector<std::string> ids;
  for (const auto& x : r.risks) ids.push_back(x.id);
  detail::require_unique_ids(ids, "risks");
  return r;
}

inline json to_document(const CountermeasureCatalog& c) {
  json records = json::array();
  for (const auto& r : c.records) {
    records.push_back({{"id", r.id},
                       {"name", r.name},
                       {"tags", r.tags},
                       {"cost", r.cost},
                       {"provenance", r.provenance}});
  }
  return json{{"format", catalog_format}, {"countermeasures", records}};
}

inline CountermeasureCatalog catalog_from_document(const json& doc) {
  require_format(doc, catalog_format);
  FieldReader f(doc, "");
  CountermeasureCatalog c;
  detail::for_each_object(f, "countermeasures", [&](const FieldReader& x) {
    CountermeasureRecord r;
    r.id = x.string("id");
    r.name = x.string_or("name", "");
    r.tags = x.strings("tags");
    r.cost = x.number_or("cost", default_countermeasure_cost);
    if (!(r.cost >= 0.0)) FieldReader::fail(x.child("cost"), "must be >= 0");
    r.provenance = x.string_or("provenance", "");
    c.records.push_back(std::move(r));
  });
  std::vector<std::string> ids;
  for (const auto& r : c.records) ids.push_back(r.id);
  detail::require_unique_ids(ids, "countermeasures");
  return c;
}

inline json to_document(const delphi::SessionConfig& c) {
  json j = delphi::config_json(c);
  j["format"] = session_format;
  return j;
}

inline delphi::SessionConfig session_from_document(const json& doc) {
  require_format(doc, session_format);
  auto config = delphi::read_config(FieldReader(doc, ""));
  delphi::validate_config(config);
  return config;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, "cannot read " + path, {path});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema, origin + ": malformed JSON: " + e.what(), {origin});
  }
}

inline json read_json(const std::string& path) { return parse_json_text(read_text(path), path); }

inline void write_text(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::storage, "cannot write " + path, {path});
    out << text;
    if (!out.flush()) throw Error(ErrorCode::storage, "cannot write " + path, {path});
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw Error(ErrorCode::storage, "cannot replace " + path, {path});
  }
}

inline void write_json(const std::string& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

inline OrganizationProfile load_profile(const std::string& path) {
  return profile_from_document(read_json(path));
}
inline void save_profile(const std::string& path, const OrganizationProfile& p) {
  write_json(path, to_document(p));
}
inline RiskRegister load_register(const std::string& path) {
  return register_from_document(read_json(path));
}
inline void save_register(const std::string& path, const RiskRegister& r) {
  write_json(path, to_document(r));
}
inline CountermeasureCatalog load_catalog(const std::string& path) {
  return catalog_from_document(read_json(path));
}
inline void save_catalog(const std::string& path, const CountermeasureCatalog& c) {
  write_json(path, to_document(c));
}

// ---------------------------------------------------------------------------
// Tables

/// Impact matrix from a table whose header is `risk,<objective ids...>` and
/// whose rows are one per risk. Every problem is reported as a (row,column)
/// cell in the error details.
inline ImpactMatrix import_impact_matrix(std::string_view text, const OrganizationProfile& profile,
                                         const RiskRegister& risks) {
  auto rows = csv::parse(text);
  if (rows.empty()) throw Error(ErrorCode::schema, "impact table is empty");
  const auto& header = rows.front().cells;
  std::vector<std::string> problems;
  std::set<std::string> objective_ids, risk_ids;
  for (const auto& o : profile.objectives) objective_ids.insert(o.id);
  for (const auto& r : risks.risks) risk_ids.insert(r.id);

  std::map<std::string, std::size_t> column_of;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (!objective_ids.contains(header[c])) {
      problems.push_back("unknown objective column " + header[c]);
    } else if (!column_of.emplace(header[c], c).second) {
      problems.push_back("duplicate objective column " + header[c]);
    }
  }
  std::map<std::string, const csv::Row*> row_of;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& id = rows[i].cells.front();
    if (!risk_ids.contains(id)) {
      problems.push_back("unknown risk row " + id + " (line " + std::to_string(rows[i].line) + ")");
    } else if (!row_of.emplace(id, &rows[i]).second) {
      problems.push_back("duplicate risk row " + id);
    }
  }

  std::vector<std::string> out_risks, out_objectives;
  std::vector<double> values;
  for (const auto& o : profile.objectives) out_objectives.push_back(o.id);
  for (const auto& r : risks.risks) {
    out_risks.push_back(r.id);
    auto row = row_of.find(r.id);
    for (const auto& o : profile.objectives) {
      std::string cell = "(" + r.id + "," + o.id + ")";
      auto col = column_of.find(o.id);
      if (row == row_of.end() || col == column_of.end() ||
          col->second >= row->second->cells.size() || row->second->cells[col->second].empty()) {
        problems.push_back("missing cell " + cell);
        values.push_back(0.0);
        continue;
      }
      auto v = csv::parse_number(row->second->cells[col->second]);
      if (!v) {
        problems.push_back("non-numeric cell " + cell);
        values.push_back(0.0);
      } else if (!(*v >= 0.0 && *v <= 1.0)) {
        problems.push_back("out-of-range cell " + cell);
        values.push_back(0.0);
      } else {
        values.push_back(*v);
      }
    }
  }
  if (!problems.empty()) {
    bool range_only = std::all_of(problems.begin(), problems.end(), [](const std::string& p) {
      return p.starts_with("out-of-range");
    });
    std::string msg = "impact table: " + problems.front();
    throw Error(range_only ? ErrorCode::out_of_range : ErrorCode::structural, msg, std::move(problems));
  }
  return ImpactMatrix(std::move(out_risks), std::move(out_objectives), std::move(values));
}

inline std::string export_impact_matrix(const ImpactMatrix& m) {
  std::vector<std::string> header{"risk"};
  header.insert(header.end(), m.objective_ids().begin(), m.objective_ids().end());
  std::string out = csv::join(header) + "\n";
  for (const auto& r : m.risk_ids()) {
    std::vector<std::string> cells{r};
    for (double v : m.row(r)) cells.push_back(format_exact(v));
    out += csv::join(cells) + "\n";
  }
  return out;
}

/// Reduction table with header `countermeasure,<risk ids...>`. Risk columns
/// absent from the table are inapplicable (all zero). When a catalog is
/// given, every countermeasure row must exist in it.
inline ReductionMatrix import_reduction_matrix(std::string_view text, const RiskRegister& risks,
                                               const CountermeasureCatalog* catalog = nullptr) {
  auto rows = csv::parse(text);
  if (rows.empty()) throw Error(ErrorCode::schema, "reduction table is empty");
  const auto& header = rows.front().cells;
  std::set<std::string> risk_ids;
  for (const auto& r : risks.risks) risk_ids.insert(r.id);
  std::vector<std::string> problems;
  std::map<std::string, std::size_t> column_of;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (!risk_ids.contains(header[c])) {
      problems.push_back("unknown risk column " + header[c]);
    } else if (!column_of.emplace(header[c], c).second) {
      problems.push_back("duplicate risk column " + header[c]);
    }
  }
  std::vector<std::string> cms, out_risks;
  for (const auto& r : risks.risks) out_risks.push_back(r.id);
  std::vector<double> values;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& cells = rows[i].cells;
    const auto& id = cells.front();
    if (!seen.insert(id).second) problems.push_back("duplicate countermeasure row " + id);
    if (catalog && !catalog->find(id)) problems.push_back("countermeasure " + id + " not in catalog");
    cms.push_back(id);
    for (const auto& r : out_risks) {
      auto col = column_of.find(r);
      if (col == column_of.end()) {
        values.push_back(0.0);
        continue;
      }
      std::string cell = "(" + id + "," + r + ")";
      if (col->second >= cells.size() || cells[col->second].empty()) {
        problems.push_back("missing cell " + cell);
        values.push_back(0.0);
        continue;
      }
      auto v = csv::parse_number(cells[col->second]);
      if (!v) {
        problems.push_back("non-numeric cell " + cell);
        values.push_back(0.0);
      } else if (!(*v >= 0.0 && *v <= 1.0)) {
        problems.push_back("out-of-range cell " + cell);
        values.push_back(0.0);
      } else {
        values.push_back(*v);
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "reduction table: " + problems.front();
    throw Error(ErrorCode::structural, msg, std::move(problems));
  }
  return ReductionMatrix(std::move(cms), std::move(out_risks), std::move(values));
}

/// Feeds one Delphi round table (header `participant,<quantity keys...>`,
/// one row per participant) into the session's active round as `actor`
/// would. Rows are submitted in file order.
inline void ingest_round_table(delphi::Session& session, std::string_view text) {
  auto rows = csv::parse(text);
  if (rows.empty()) throw Error(ErrorCode::schema, "round table is empty");
  const auto& header = rows.front().cells;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& cells = rows[i].cells;
    const std::string& participant = cells.front();
    if (!session.is_participant(participant)) {
      throw Error(ErrorCode::forbidden,
                  "round table line " + std::to_string(rows[i].line) + ": unknown participant " +
                      participant,
                  {participant});
    }
    for (std::size_t c = 1; c < header.size(); ++c) {
      if (c >= cells.size() || cells[c].empty()) continue;  // left for close_round to report
      auto v = csv::parse_number(cells[c]);
      if (!v) {
        throw Error(ErrorCode::schema,
                    "round table line " + std::to_string(rows[i].line) + ": non-numeric " + header[c],
                    {participant, header[c]});
      }
      session.submit(participant, header[c], *v);
    }
  }
}

// ---------------------------------------------------------------------------
// Estimates -> assessment inputs

struct AssessmentInputs {
  OrganizationProfile profile;
  RiskRegister risks;
  std::optional<ImpactMatrix> impact;
  std::optional<ReductionMatrix> reductions;
};

/// Overlays finalized estimates on a profile and register. Impacts must be
/// estimated for every (risk, objective) cell unless `base_impact` supplies
/// the rest; level reductions build a reduction matrix with zeros elsewhere.
inline AssessmentInputs apply_estimates(const delphi::EstimateSet& estimates,
                                        OrganizationProfile profile, RiskRegister risks,
                                        const ImpactMatrix* base_impact = nullptr) {
  using delphi::QuantityKind;
  std::map<std::pair<std::string, std::string>, double> impacts, reductions;
  std::vector<std::string> cms;
  for (const auto& v : estimates.values) {
    auto q = delphi::QuantityRef::parse(v.quantity);
    switch (q.kind) {
      case QuantityKind::weight: {
        auto it = std::find_if(profile.objectives.begin(), profile.objectives.end(),
                               [&](const Objective& o) { return o.id == q.target; });
        if (it == profile.objectives.end()) {
          throw Error(ErrorCode::not_found, "estimate for unknown objective " + q.target, {q.key()});
        }
        it->weight = v.value;
        break;
      }
      case QuantityKind::likelihood: {
        auto it = std::find_if(risks.risks.begin(), risks.risks.end(),
                               [&](const RiskRecord& r) { return r.id == q.target; });
        if (it == risks.risks.end()) {
          throw Error(ErrorCode::not_found, "estimate for unknown risk " + q.target, {q.key()});
        }
        it->likelihood = v.value;
        break;
      }
      case QuantityKind::impact:
        impacts[{q.target, q.secondary}] = v.value;
        break;
      case QuantityKind::levelred:
        reductions[{q.secondary, q.target}] = v.value;
        if (std::find(cms.begin(), cms.end(), q.secondary) == cms.end()) cms.push_back(q.secondary);
        break;
    }
  }
  require_valid_weights(profile.objectives);

  AssessmentInputs out;
  if (!impacts.empty() || base_impact) {
    std::vector<std::string> rids, oids, missing;
    std::vector<double> values;
    for (const auto& o : profile.objectives) oids.push_back(o.id);
    for (const auto& r : risks.risks) {
      rids.push_back(r.id);
      for (const auto& o : profile.objectives) {
        auto it = impacts.find({r.id, o.id});
        if (it != impacts.end()) {
          values.push_back(it->second);
        } else if (base_impact && base_impact->has_risk(r.id)) {
          values.push_back(base_impact->at(r.id, o.id));
        } else {
          missing.push_back("(" + r.id + "," + o.id + ")");
          values.push_back(0.0);
        }
      }
    }
    if (!missing.empty()) {
      std::string msg = "no impact estimate for cell " + missing.front();
      throw Error(ErrorCode::structural, msg, std::move(missing));
    }
    out.impact = ImpactMatrix(std::move(rids), std::move(oids), std::move(values));
  }
  if (!reductions.empty()) {
    std::sort(cms.begin(), cms.end());
    std::vector<std::string> rids;
    std::vector<double> values;
    for (const auto& r : risks.risks) rids.push_back(r.id);
    for (const auto& c : cms) {
      for (const auto& r : rids) {
        auto it = reductions.find({c, r});
        values.push_back(it == reductions.end() ? 0.0 : it->second);
      }
    }
    out.reductions = ReductionMatrix(std::move(cms), std::move(rids), std::move(values));
  }
  out.profile = std::move(profile);
  out.risks = std::move(risks);
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

struct AppliedPlan {
  ReductionMatrix reductions;
  std::map<std::string, double> costs;
  PlanEvaluation evaluation;

  friend bool operator==(const AppliedPlan&, const AppliedPlan&) = default;
};

/// Frozen evaluation. Inputs are stored next to the outputs so the outputs
/// can be recomputed and compared bit for bit.
struct AssessmentSnapshot {
  std::string snapshot_id;
  std::string timestamp;
  std::string org_id;
  std::int64_t profile_version = 0;
  double alpha = 0.0;
  ObjectiveSet objectives;
  std::vector<RiskRecord> risks;
  ImpactMatrix impact;
  std::vector<RiskLevelResult> levels;
  double grl = 0.0;
  std::optional<AppliedPlan> plan;

  /// Residual level where a plan is applied, otherwise the assessed level.
  std::vector<RiskLevelResult> effective_levels() const {
    if (!plan) return levels;
    std::vector<RiskLevelResult> out;
    for (const auto& r : plan->evaluation.risks) out.push_back({r.risk_id, r.residual, r.after});
    return out;
  }

  double effective_grl() const { return plan ? plan->evaluation.grl_after : grl; }

  TreatmentProblem treatment_problem(ReductionMatrix reductions,
                                     std::map<std::string, double> costs) const {
    TreatmentProblem p;
    for (const auto& l : levels) p.levels.push_back({l.risk_id, l.level});
    p.reductions = std::move(reductions);
    p.costs = std::move(costs);
    p.alpha = alpha;
    return p;
  }

  friend bool operator==(const AssessmentSnapshot&, const AssessmentSnapshot&) = default;
};

namespace detail {

inline json snapshot_body(const AssessmentSnapshot& s) {
  json j = {{"format", snapshot_format},
            {"org_id", s.org_id},
            {"profile_version", s.profile_version},
            {"alpha", s.alpha},
            {"inputs", {{"objectives", s.objectives}, {"risks", s.risks}, {"impact", s.impact}}},
            {"levels", s.levels},
            {"grl", s.grl}};
  if (s.plan) {
    json costs = json::object();
    for (const auto& [k, v] : s.plan->costs) costs[k] = v;
    j["plan"] = {{"reductions", s.plan->reductions},
                 {"costs", costs},
                 {"evaluation", s.plan->evaluation}};
  } else {
    j["plan"] = nullptr;
  }
  return j;
}

// FNV-1a over the canonical body; the id does not depend on the timestamp.
inline std::string content_id(const json& body) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : body.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

inline json to_document(const AssessmentSnapshot& s) {
  json j = detail::snapshot_body(s);
  j["snapshot_id"] = s.snapshot_id;
  j["timestamp"] = s.timestamp;
  return j;
}

inline AssessmentSnapshot snapshot_from_document(const json& doc) {
  require_format(doc, snapshot_format);
  FieldReader f(doc, "");
  AssessmentSnapshot s;
  s.snapshot_id = f.string("snapshot_id");
  s.timestamp = f.string_or("timestamp", "");
  s.org_id = f.string("org_id");
  s.profile_version = f.integer_or("profile_version", 0);
  s.alpha = f.unit("alpha");
  FieldReader in(f.at("inputs"), "inputs");
  detail::for_each_object(in, "objectives",
                          [&](const FieldReader& o) { s.objectives.push_back(read_objective(o)); });
  detail::for_each_object(in, "risks",
                          [&](const FieldReader& r) { s.risks.push_back(read_risk(r)); });
  s.impact = read_impact(FieldReader(in.at("impact"), "inputs.impact"));
  detail::for_each_object(f, "levels", [&](const FieldReader& l) { s.levels.push_back(read_level(l)); });
  s.grl = f.number("grl");
  if (f.has("plan")) {
    FieldReader p(f.at("plan"), "plan");
    AppliedPlan plan;
    plan.reductions = read_reductions(FieldReader(p.at("reductions"), "plan.reductions"));
    const json& costs = p.at("costs");
    if (!costs.is_object()) FieldReader::fail("plan.costs", "expected an object");
    for (const auto& [k, v] : costs.items()) {
      if (!v.is_number()) FieldReader::fail("plan.costs." + k, "expected a number");
      plan.costs[k] = v.get<double>();
    }
    plan.evaluation = read_evaluation(FieldReader(p.at("evaluation"), "plan.evaluation"));
    s.plan = std::move(plan);
  }
  return s;
}

inline AssessmentSnapshot load_snapshot(const std::string& path) {
  return snapshot_from_document(read_json(path));
}

inline void save_snapshot(const std::string& path, const AssessmentSnapshot& s) {
  write_json(path, to_document(s));
}

inline void seal(AssessmentSnapshot& s) { s.snapshot_id = detail::content_id(detail::snapshot_body(s)); }

/// Assessment of the register against the profile. `alpha_override`
/// replaces the profile tolerance when set.
inline AssessmentSnapshot assess(const OrganizationProfile& profile, const RiskRegister& risks,
                                 const ImpactMatrix& impact, std::string timestamp = {},
                                 std::optional<double> alpha_override = std::nullopt) {
  if (!risks.org_id.empty() && risks.org_id != profile.org_id) {
    throw Error(ErrorCode::conflict,
                "register belongs to " + risks.org_id + ", profile to " + profile.org_id);
  }
  AssessmentSnapshot s;
  s.timestamp = std::move(timestamp);
  s.org_id = profile.org_id;
  s.profile_version = profile.version;
  s.alpha = alpha_override.value_or(profile.tolerance);
  s.objectives = profile.objectives;
  s.risks = risks.risks;
  s.impact = impact;
  s.levels = evaluate_risks(s.risks, s.objectives, s.impact, s.alpha);
  std::vector<double> lv;
  for (const auto& l : s.levels) lv.push_back(l.level);
  s.grl = global_risk_level(lv);
  seal(s);
  return s;
}

/// New snapshot with `plan` applied on top of the assessed levels.
inline AssessmentSnapshot apply_plan(const AssessmentSnapshot& base, ReductionMatrix reductions,
                                     std::map<std::string, double> costs,
                                     std::vector<std::string> plan, std::string timestamp = {},
                                     RoundingMode rounding = RoundingMode::full) {
  AssessmentSnapshot s = base;
  s.timestamp = std::move(timestamp);
  TreatmentProblem problem = base.treatment_problem(reductions, costs);
  s.plan = AppliedPlan{std::move(reductions), std::move(costs),
                       evaluate_plan(problem, std::move(plan), rounding)};
  seal(s);
  return s;
}

/// Recomputes every output from the stored inputs.
inline AssessmentSnapshot recompute(const AssessmentSnapshot& stored) {
  AssessmentSnapshot s = stored;
  s.levels = evaluate_risks(s.risks, s.objectives, s.impact, s.alpha);
  std::vector<double> lv;
  for (const auto& l : s.levels) lv.push_back(l.level);
  s.grl = global_risk_level(lv);
  if (s.plan) {
    TreatmentProblem problem = s.treatment_problem(s.plan->reductions, s.plan->costs);
    s.plan->evaluation =
        evaluate_plan(problem, s.plan->evaluation.plan.countermeasures, s.plan->evaluation.rounding);
  }
  seal(s);
  return s;
}

inline bool verify_snapshot(const AssessmentSnapshot& stored) { return recompute(stored) == stored; }

// ---------------------------------------------------------------------------
// Monitoring

struct RiskDelta {
  std::string risk_id;
  double before = 0.0;
  double after = 0.0;
  double delta = 0.0;

  friend bool operator==(const RiskDelta&, const RiskDelta&) = default;
};

struct ClassificationFlip {
  std::string risk_id;
  Classification from = Classification::acceptable;
  Classification to = Classification::acceptable;

  friend bool operator==(const ClassificationFlip&, const ClassificationFlip&) = default;
};

struct MonitoringReport {
  std::string org_id;
  std::string before_id;
  std::string after_id;
  std::vector<RiskDelta> deltas;  // risks present in both, in `before` order
  double grl_before = 0.0;
  double grl_after = 0.0;
  double grl_delta = 0.0;
  std::vector<std::string> added;    // newly identified in `after`
  std::vector<std::string> retired;  // absent from `after`
  std::vector<ClassificationFlip> flips;
  std::vector<double> levels_before;  // effective levels of every risk in each snapshot
  std::vector<double> levels_after;

  friend bool operator==(const MonitoringReport&, const MonitoringReport&) = default;
};

/// Compares the effective (post-treatment where a plan is applied) levels.
inline MonitoringReport diff_snapshots(const AssessmentSnapshot& a, const AssessmentSnapshot& b) {
  if (a.org_id != b.org_id) {
    throw Error(ErrorCode::conflict,
                "snapshots belong to different organizations (" + a.org_id + ", " + b.org_id + ")");
  }
  MonitoringReport m;
  m.org_id = a.org_id;
  m.before_id = a.snapshot_id;
  m.after_id = b.snapshot_id;
  auto la = a.effective_levels();
  auto lb = b.effective_levels();
  std::map<std::string, const RiskLevelResult*> in_b;
  for (const auto& l : lb) in_b[l.risk_id] = &l;
  std::set<std::string> in_a;
  for (const auto& l : la) {
    in_a.insert(l.risk_id);
    auto it = in_b.find(l.risk_id);
    if (it == in_b.end()) {
      m.retired.push_back(l.risk_id);
      continue;
    }
    m.deltas.push_back({l.risk_id, l.level, it->second->level, it->second->level - l.level});
    if (l.classification != it->second->classification) {
      m.flips.push_back({l.risk_id, l.classification, it->second->classification});
    }
  }
  for (const auto& l : lb) {
    if (!in_a.contains(l.risk_id)) m.added.push_back(l.risk_id);
  }
  for (const auto& l : la) m.levels_before.push_back(l.level);
  for (const auto& l : lb) m.levels_after.push_back(l.level);
  m.grl_before = a.effective_grl();
  m.grl_after = b.effective_grl();
  m.grl_delta = m.grl_after - m.grl_before;
  return m;
}

inline json to_document(const MonitoringReport& m) {
  json deltas = json::array();
  for (const auto& d : m.deltas) {
    deltas.push_back({{"risk", d.risk_id}, {"before", d.before}, {"after", d.after}, {"delta", d.delta}});
  }
  json flips = json::array();
  for (const auto& f : m.flips) {
    flips.push_back({{"risk", f.risk_id}, {"from", to_string(f.from)}, {"to", to_string(f.to)}});
  }
  return json{{"format", "csrm.monitoring/1"},
              {"org_id", m.org_id},
              {"before", m.before_id},
              {"after", m.after_id},
              {"deltas", deltas},
              {"grl_before", m.grl_before},
              {"grl_after", m.grl_after},
              {"grl_delta", m.grl_delta},
              {"added", m.added},
              {"retired", m.retired},
              {"flips", flips},
              {"levels_before", m.levels_before},
              {"levels_after", m.levels_after}};
}

}  // namespace csrm
