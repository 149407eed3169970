#pragma once

// JSON mapping for the domain types. Reads go through `FieldReader` so a
// malformed document yields a schema error naming the offending path.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csrm/delphi.hpp"
#include "csrm/error.hpp"
#include "csrm/risk_model.hpp"
#include "csrm/treatment.hpp"

namespace csrm {

using json = nlohmann::json;

class FieldReader {
 public:
  FieldReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "expected an object");
  }

  const json& raw() const { return node_; }
  const std::string& path() const { return path_; }

  bool has(const char* key) const { return node_.contains(key) && !node_.at(key).is_null(); }

  const json& at(const char* key) const {
    if (!node_.contains(key)) fail(child(key), "missing required field");
    return node_.at(key);
  }

  std::string string(const char* key) const {
    const json& v = at(key);
    if (!v.is_string()) fail(child(key), "expected a string");
    return v.get<std::string>();
  }

  std::string string_or(const char* key, std::string fallback) const {
    return has(key) ? string(key) : fallback;
  }

  double number(const char* key) const {
    const json& v = at(key);
    if (!v.is_number()) fail(child(key), "expected a number");
    return v.get<double>();
  }

  double number_or(const char* key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  double unit(const char* key) const {
    double v = number(key);
    if (!(v >= 0.0 && v <= 1.0)) fail(child(key), "must lie in [0,1]");
    return v;
  }

  std::int64_t integer(const char* key) const {
    const json& v = at(key);
    if (!v.is_number_integer()) fail(child(key), "expected an integer");
    return v.get<std::int64_t>();
  }

  std::int64_t integer_or(const char* key, std::int64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  bool boolean_or(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) fail(child(key), "expected a boolean");
    return v.get<bool>();
  }

  const json& array(const char* key) const {
    const json& v = at(key);
    if (!v.is_array()) fail(child(key), "expected an array");
    return v;
  }

  std::vector<std::string> strings(const char* key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    const json& v = array(key);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) fail(child(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::schema, path + ": " + what, {path});
  }

 private:
  const json& node_;
  std::string path_;
};

/// Checks the document's "format" tag against the supported one.
inline void require_format(const json& doc, const std::string& expected) {
  if (!doc.is_object() || !doc.contains("format") || !doc.at("format").is_string()) {
    throw Error(ErrorCode::schema, "format: missing required field", {"format"});
  }
  auto got = doc.at("format").get<std::string>();
  if (got != expected) {
    throw Error(ErrorCode::unsupported_format,
                "unsupported document format '" + got + "', expected '" + expected + "'", {got});
  }
}

inline void to_json(json& j, const Objective& o) {
  j = json{{"id", o.id}, {"name", o.name}, {"weight", o.weight}};
}

inline Objective read_objective(const FieldReader& f) {
  return {f.string("id"), f.string_or("name", ""), f.unit("weight")};
}

inline void to_json(json& j, const RiskRecord& r) {
  j = json{{"id", r.id}, {"name", r.name}, {"likelihood", r.likelihood}, {"tags", r.tags}};
}

inline RiskRecord read_risk(const FieldReader& f) {
  return {f.string("id"), f.string_or("name", ""), f.unit("likelihood"), f.strings("tags")};
}

inline void to_json(json& j, const ImpactMatrix& m) {
  json rows = json::array();
  for (const auto& r : m.risk_ids()) {
    json row = json::array();
    for (double v : m.row(r)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  j = json{{"risks", m.risk_ids()}, {"objectives", m.objective_ids()}, {"values", rows}};
}

inline ImpactMatrix read_impact(const FieldReader& f) {
  auto risks = f.strings("risks");
  auto objectives = f.strings("objectives");
  const json& rows = f.array("values");
  if (rows.size() != risks.size()) FieldReader::fail(f.child("values"), "one row per risk required");
  std::vector<double> values;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string rp = f.child("values") + "[" + std::to_string(r) + "]";
    if (!rows[r].is_array() || rows[r].size() != objectives.size()) {
      FieldReader::fail(rp, "one value per objective required");
    }
    for (const auto& v : rows[r]) {
      if (!v.is_number()) FieldReader::fail(rp, "expected numbers");
      values.push_back(v.get<double>());
    }
  }
  return ImpactMatrix(std::move(risks), std::move(objectives), std::move(values));
}

inline void to_json(json& j, const ReductionMatrix& m) {
  json rows = json::array();
  const std::size_t n = m.risk_ids().size();
  for (std::size_t c = 0; c < m.countermeasure_ids().size(); ++c) {
    json row = json::array();
    for (std::size_t r = 0; r < n; ++r) row.push_back(m.values()[c * n + r]);
    rows.push_back(std::move(row));
  }
  j = json{{"countermeasures", m.countermeasure_ids()}, {"risks", m.risk_ids()}, {"values", rows}};
}

inline ReductionMatrix read_reductions(const FieldReader& f) {
  auto cms = f.strings("countermeasures");
  auto risks = f.strings("risks");
  const json& rows = f.array("values");
  if (rows.size() != cms.size()) {
    FieldReader::fail(f.child("values"), "one row per countermeasure required");
  }
  std::vector<double> values;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    std::string rp = f.child("values") + "[" + std::to_string(c) + "]";
    if (!rows[c].is_array() || rows[c].size() != risks.size()) {
      FieldReader::fail(rp, "one value per risk required");
    }
    for (const auto& v : rows[c]) {
      if (!v.is_number()) FieldReader::fail(rp, "expected numbers");
      values.push_back(v.get<double>());
    }
  }
  return ReductionMatrix(std::move(cms), std::move(risks), std::move(values));
}

inline void to_json(json& j, const RiskLevelResult& r) {
  j = json{{"risk", r.risk_id}, {"level", r.level}, {"classification", to_string(r.classification)}};
}

inline Classification parse_classification(const std::string& s, const std::string& path) {
  if (s == "acceptable") return Classification::acceptable;
  if (s == "unacceptable") return Classification::unacceptable;
  FieldReader::fail(path, "expected acceptable|unacceptable");
}

inline RiskLevelResult read_level(const FieldReader& f) {
  return {f.string("risk"), f.unit("level"),
          parse_classification(f.string("classification"), f.child("classification"))};
}

inline void to_json(json& j, const TreatmentPlan& p) {
  j = json{{"countermeasures", p.countermeasures}, {"total_cost", p.total_cost}};
}

inline void to_json(json& j, const RiskTreatment& t) {
  j = json{{"risk", t.risk_id},        {"level", t.level},
           {"crr", t.crr},             {"residual", t.residual},
           {"treated", t.treated},     {"before", to_string(t.before)},
           {"after", to_string(t.after)}};
}

inline void to_json(json& j, const PlanEvaluation& e) {
  j = json{{"plan", e.plan},
           {"risks", e.risks},
           {"alpha", e.alpha},
           {"grl_before", e.grl_before},
           {"grl_after", e.grl_after},
           {"grr", e.grr},
           {"feasible", e.feasible},
           {"rounding", to_string(e.rounding)}};
}

inline PlanEvaluation read_evaluation(const FieldReader& f) {
  PlanEvaluation e;
  FieldReader plan(f.at("plan"), f.child("plan"));
  e.plan.countermeasures = plan.strings("countermeasures");
  e.plan.total_cost = plan.number("total_cost");
  const json& risks = f.array("risks");
  for (std::size_t i = 0; i < risks.size(); ++i) {
    FieldReader r(risks[i], f.child("risks") + "[" + std::to_string(i) + "]");
    RiskTreatment t;
    t.risk_id = r.string("risk");
    t.level = r.unit("level");
    t.crr = r.unit("crr");
    t.residual = r.unit("residual");
    t.treated = r.boolean_or("treated", false);
    t.before = parse_classification(r.string("before"), r.child("before"));
    t.after = parse_classification(r.string("after"), r.child("after"));
    e.risks.push_back(std::move(t));
  }
  e.alpha = f.unit("alpha");
  e.grl_before = f.number("grl_before");
  e.grl_after = f.number("grl_after");
  e.grr = f.number("grr");
  e.feasible = f.boolean_or("feasible", false);
  e.rounding = parse_rounding_mode(f.string_or("rounding", "full"));
  return e;
}

namespace delphi {

inline void to_json(json& j, const QuantityConsensus& q) {
  j = json{{"quantity", q.quantity}, {"median", q.median}, {"mean", q.mean}, {"min", q.min},
           {"max", q.max},           {"ratio", q.ratio},   {"reached", q.reached}};
}

inline void to_json(json& j, const ConsensusReport& r) {
  j = json{{"round", r.round}, {"quantities", r.quantities}, {"overall_reached", r.overall_reached}};
}

inline ConsensusReport read_report(const FieldReader& f) {
  ConsensusReport r;
  r.round = static_cast<int>(f.integer("round"));
  r.overall_reached = f.boolean_or("overall_reached", false);
  const json& qs = f.array("quantities");
  for (std::size_t i = 0; i < qs.size(); ++i) {
    FieldReader q(qs[i], f.child("quantities") + "[" + std::to_string(i) + "]");
    r.quantities.push_back({q.string("quantity"), q.number("median"), q.number("mean"),
                            q.number("min"), q.number("max"), q.number("ratio"),
                            q.boolean_or("reached", false)});
  }
  return r;
}

inline void to_json(json& j, const EstimateSet& e) {
  json values = json::array();
  for (const auto& v : e.values) values.push_back({{"quantity", v.quantity}, {"value", v.value}});
  j = json{{"format", "csrm.estimates/1"},
           {"session_id", e.session_id},
           {"rounds", e.rounds},
           {"forced", e.forced},
           {"values", values}};
}

inline EstimateSet read_estimates(const FieldReader& f) {
  EstimateSet e;
  e.session_id = f.string("session_id");
  e.rounds = static_cast<int>(f.integer("rounds"));
  e.forced = f.boolean_or("forced", false);
  const json& vs = f.array("values");
  for (std::size_t i = 0; i < vs.size(); ++i) {
    FieldReader v(vs[i], f.child("values") + "[" + std::to_string(i) + "]");
    e.values.push_back({v.string("quantity"), v.unit("value")});
  }
  return e;
}

inline json config_json(const SessionConfig& c) {
  json qs = json::array();
  for (const auto& q : c.quantities) qs.push_back(q.key());
  return json{{"session_id", c.session_id}, {"moderator", c.moderator},
              {"participants", c.participants}, {"quantities", qs},
              {"theta", c.theta}, {"delta", c.delta}, {"max_rounds", c.max_rounds}};
}

inline SessionConfig read_config(const FieldReader& f) {
  SessionConfig c;
  c.session_id = f.string("session_id");
  c.moderator = f.string("moderator");
  c.participants = f.strings("participants");
  for (const auto& q : f.strings("quantities")) c.quantities.push_back(QuantityRef::parse(q));
  c.theta = f.number_or("theta", 0.85);
  c.delta = f.number_or("delta", 0.05);
  c.max_rounds = static_cast<int>(f.integer_or("max_rounds", 10));
  return c;
}

inline SessionState parse_state(const std::string& s, const std::string& path) {
  for (auto st : {SessionState::open, SessionState::round_active, SessionState::finalized,
                  SessionState::deadlocked}) {
    if (to_string(st) == s) return st;
  }
  FieldReader::fail(path, "unknown session state");
}

inline json state_json(const SessionData& d) {
  json rounds = json::array();
  for (const auto& r : d.rounds) {
    json est = json::object();
    for (const auto& [q, cells] : r.estimates) {
      json by = json::object();
      for (const auto& [p, e] : cells) by[p] = {{"value", e.value}, {"confirmed", e.confirmed}};
      est[q] = std::move(by);
    }
    json jr = {{"number", r.number},
               {"status", r.status == RoundStatus::closed ? "closed" : "collecting"},
               {"estimates", est}};
    jr["report"] = r.report ? json(*r.report) : json(nullptr);
    rounds.push_back(std::move(jr));
  }
  json audit = json::array();
  for (const auto& a : d.audit) {
    audit.push_back({{"sequence", a.sequence}, {"action", a.action}, {"detail", a.detail}});
  }
  json j = {{"format", "csrm.delphi-state/1"},
            {"config", config_json(d.config)},
            {"state", to_string(d.state)},
            {"rounds", rounds},
            {"audit", audit}};
  j["result"] = d.result ? json(*d.result) : json(nullptr);
  return j;
}

inline SessionData read_state(const json& doc) {
  require_format(doc, "csrm.delphi-state/1");
  FieldReader f(doc, "");
  SessionData d;
  d.config = read_config(FieldReader(f.at("config"), "config"));
  d.state = parse_state(f.string("state"), "state");
  const json& rounds = f.array("rounds");
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    FieldReader r(rounds[i], "rounds[" + std::to_string(i) + "]");
    Round round;
    round.number = static_cast<int>(r.integer("number"));
    round.status = r.string("status") == "closed" ? RoundStatus::closed : RoundStatus::collecting;
    const json& est = r.at("estimates");
    if (!est.is_object()) FieldReader::fail(r.child("estimates"), "expected an object");
    for (const auto& [q, cells] : est.items()) {
      for (const auto& [p, e] : cells.items()) {
        FieldReader ef(e, r.child("estimates") + "." + q + "." + p);
        round.estimates[q][p] = {ef.unit("value"), ef.boolean_or("confirmed", true)};
      }
    }
    if (r.has("report")) round.report = read_report(FieldReader(r.at("report"), r.child("report")));
    d.rounds.push_back(std::move(round));
  }
  if (f.has("audit")) {
    const json& audit = f.array("audit");
    for (std::size_t i = 0; i < audit.size(); ++i) {
      FieldReader a(audit[i], "audit[" + std::to_string(i) + "]");
      d.audit.push_back({static_cast<int>(a.integer("sequence")), a.string("action"),
                         a.string_or("detail", "")});
    }
  }
  if (f.has("result")) {
    d.result = read_estimates(FieldReader(f.at("result"), "result"));
  }
  return d;
}

}  // namespace delphi

}  // namespace csrm
