#pragma once

// Delphi estimation sessions: anonymous rounds of expert estimates for
// weights, likelihoods, impacts and level reductions, aggregated to a
// median with a per-quantity agreement ratio.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csrm/error.hpp"
#include "csrm/risk_model.hpp"

namespace csrm::delphi {

enum class QuantityKind { weight, likelihood, impact, levelred };

inline constexpr std::string_view to_string(QuantityKind k) noexcept {
  switch (k) {
    case QuantityKind::weight: return "weight";
    case QuantityKind::likelihood: return "likelihood";
    case QuantityKind::impact: return "impact";
    case QuantityKind::levelred: return "levelred";
  }
  return "?";
}

/// What is being estimated. Serialized as "weight:o1", "likelihood:r1",
/// "impact:r1:o2" or "levelred:r1:c3".
struct QuantityRef {
  QuantityKind kind = QuantityKind::weight;
  std::string target;     // objective id for weight, risk id otherwise
  std::string secondary;  // objective id for impact, countermeasure id for levelred

  std::string key() const {
    std::string k = std::string(to_string(kind)) + ":" + target;
    if (!secondary.empty()) k += ":" + secondary;
    return k;
  }

  static QuantityRef parse(std::string_view text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      std::size_t colon = text.find(':', start);
      parts.emplace_back(text.substr(start, colon - start));
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
    auto bad = [&] {
      return Error(ErrorCode::invalid_argument, "malformed quantity '" + std::string(text) + "'",
                   {std::string(text)});
    };
    for (const auto& p : parts) {
      if (p.empty()) throw bad();
    }
    QuantityRef q;
    if (parts[0] == "weight" && parts.size() == 2) {
      q.kind = QuantityKind::weight;
    } else if (parts[0] == "likelihood" && parts.size() == 2) {
      q.kind = QuantityKind::likelihood;
    } else if (parts[0] == "impact" && parts.size() == 3) {
      q.kind = QuantityKind::impact;
    } else if (parts[0] == "levelred" && parts.size() == 3) {
      q.kind = QuantityKind::levelred;
    } else {
      throw bad();
    }
    q.target = parts[1];
    if (parts.size() == 3) q.secondary = parts[2];
    return q;
  }

  friend bool operator==(const QuantityRef&, const QuantityRef&) = default;
};

/// Median with the midpoint convention for even counts.
inline double median(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::empty_input, "median of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// Slack on the agreement band so decimal entries such as 0.65 vs 0.60 with
// a 0.05 band are not excluded by binary representation error.
inline constexpr double band_slack = 1e-12;

/// Fraction of estimates within +-delta of the median.
inline double consensus_ratio(std::span<const double> estimates, double delta) {
  if (estimates.empty()) {
    throw Error(ErrorCode::empty_input, "consensus ratio of an empty list");
  }
  double m = median(estimates);
  std::size_t inside = 0;
  for (double e : estimates) {
    if (std::abs(e - m) <= delta + band_slack) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(estimates.size());
}

struct QuantityConsensus {
  std::string quantity;
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double ratio = 0.0;
  bool reached = false;

  friend bool operator==(const QuantityConsensus&, const QuantityConsensus&) = default;
};

/// Anonymous aggregate of one closed round. Holds no participant handles.
struct ConsensusReport {
  int round = 0;
  std::vector<QuantityConsensus> quantities;
  bool overall_reached = false;

  friend bool operator==(const ConsensusReport&, const ConsensusReport&) = default;
};

inline QuantityConsensus aggregate(std::string quantity, std::span<const double> estimates,
                                   double theta, double delta) {
  QuantityConsensus q;
  q.quantity = std::move(quantity);
  q.median = median(estimates);
  q.mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) /
           static_cast<double>(estimates.size());
  auto [lo, hi] = std::minmax_element(estimates.begin(), estimates.end());
  q.min = *lo;
  q.max = *hi;
  q.ratio = consensus_ratio(estimates, delta);
  q.reached = q.ratio >= theta;
  return q;
}

struct SessionConfig {
  std::string session_id;
  std::string moderator;
  std::vector<std::string> participants;
  std::vector<QuantityRef> quantities;
  double theta = 0.85;
  double delta = 0.05;
  int max_rounds = 10;

  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

enum class SessionState { open, round_active, finalized, deadlocked };

inline constexpr std::string_view to_string(SessionState s) noexcept {
  switch (s) {
    case SessionState::open: return "open";
    case SessionState::round_active: return "round-active";
    case SessionState::finalized: return "finalized";
    case SessionState::deadlocked: return "deadlocked";
  }
  return "?";
}

struct Estimate {
  double value = 0.0;
  bool confirmed = false;  // false only for values carried over from the previous round

  friend bool operator==(const Estimate&, const Estimate&) = default;
};

enum class RoundStatus { collecting, closed };

struct Round {
  int number = 0;
  RoundStatus status = RoundStatus::collecting;
  // quantity key -> participant -> estimate
  std::map<std::string, std::map<std::string, Estimate>> estimates;
  std::optional<ConsensusReport> report;

  friend bool operator==(const Round&, const Round&) = default;
};

struct AuditEvent {
  int sequence = 0;
  std::string action;
  std::string detail;

  friend bool operator==(const AuditEvent&, const AuditEvent&) = default;
};

struct FinalEstimate {
  std::string quantity;
  double value = 0.0;

  friend bool operator==(const FinalEstimate&, const FinalEstimate&) = default;
};

struct EstimateSet {
  std::string session_id;
  int rounds = 0;
  bool forced = false;
  std::vector<FinalEstimate> values;  // session quantity order

  std::optional<double> find(const std::string& quantity) const {
    for (const auto& v : values) {
      if (v.quantity == quantity) return v.value;
    }
    return std::nullopt;
  }

  friend bool operator==(const EstimateSet&, const EstimateSet&) = default;
};

/// Complete persisted state of a session.
struct SessionData {
  SessionConfig config;
  SessionState state = SessionState::open;
  std::vector<Round> rounds;
  std::vector<AuditEvent> audit;
  std::optional<EstimateSet> result;

  friend bool operator==(const SessionData&, const SessionData&) = default;
};

struct MissingCell {
  std::string participant;
  std::string quantity;
  bool unconfirmed = false;  // a carried-over value exists but was not affirmed
};

inline void validate_config(const SessionConfig& c) {
  if (c.participants.empty()) throw Error(ErrorCode::empty_input, "participant roster is empty");
  if (c.participants.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "a Delphi session needs at least two participants");
  }
  std::set<std::string> seen;
  for (const auto& p : c.participants) {
    if (p.empty()) throw Error(ErrorCode::invalid_argument, "empty participant handle");
    if (!seen.insert(p).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate participant " + p, {p});
    }
  }
  if (c.moderator.empty()) throw Error(ErrorCode::invalid_argument, "moderator is required");
  if (c.quantities.empty()) throw Error(ErrorCode::empty_input, "session has no quantities");
  std::set<std::string> keys;
  for (const auto& q : c.quantities) {
    if (!keys.insert(q.key()).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate quantity " + q.key(), {q.key()});
    }
  }
  if (!(c.theta > 0.0 && c.theta <= 1.0)) {
    throw Error(ErrorCode::out_of_range, "consensus threshold must lie in (0,1]", {"theta"});
  }
  if (!(c.delta > 0.0 && c.delta <= 1.0)) {
    throw Error(ErrorCode::out_of_range, "agreement band must lie in (0,1]", {"delta"});
  }
  if (c.max_rounds < 1) throw Error(ErrorCode::out_of_range, "max_rounds must be >= 1", {"max_rounds"});
}

/// Checks every quantity target against the profile, register and the
/// known countermeasure ids.
inline void require_targets_resolve(const SessionConfig& c, const ObjectiveSet& objectives,
                                    const std::vector<RiskRecord>& risks,
                                    const std::vector<std::string>& countermeasures) {
  std::set<std::string> obj, rsk, cms(countermeasures.begin(), countermeasures.end());
  for (const auto& o : objectives) obj.insert(o.id);
  for (const auto& r : risks) rsk.insert(r.id);
  std::vector<std::string> unresolved;
  for (const auto& q : c.quantities) {
    bool ok = false;
    switch (q.kind) {
      case QuantityKind::weight: ok = obj.contains(q.target); break;
      case QuantityKind::likelihood: ok = rsk.contains(q.target); break;
      case QuantityKind::impact: ok = rsk.contains(q.target) && obj.contains(q.secondary); break;
      case QuantityKind::levelred: ok = rsk.contains(q.target) && cms.contains(q.secondary); break;
    }
    if (!ok) unresolved.push_back(q.key());
  }
  if (!unresolved.empty()) {
    std::string msg = "unresolved quantity target " + unresolved.front();
    throw Error(ErrorCode::not_found, msg, std::move(unresolved));
  }
}

/// One Delphi session. Mutations are serialized on an internal mutex;
/// readers get consistent copies.
class Session {
 public:
  explicit Session(SessionConfig config) {
    validate_config(config);
    data_.config = std::move(config);
    log("created", std::to_string(data_.config.participants.size()) + " participants, " +
                       std::to_string(data_.config.quantities.size()) + " quantities");
  }

  /// Restores a persisted session.
  static std::unique_ptr<Session> restore(SessionData data) {
    validate_config(data.config);
    auto s = std::unique_ptr<Session>(new Session());
    s->data_ = std::move(data);
    return s;
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  SessionData data() const {
    std::lock_guard lock(mu_);
    return data_;
  }

  SessionState state() const {
    std::lock_guard lock(mu_);
    return data_.state;
  }

  const SessionConfig& config() const noexcept { return data_.config; }  // immutable after creation

  int round_number() const {
    std::lock_guard lock(mu_);
    return data_.rounds.empty() ? 0 : data_.rounds.back().number;
  }

  std::optional<ConsensusReport> latest_report() const {
    std::lock_guard lock(mu_);
    for (auto it = data_.rounds.rbegin(); it != data_.rounds.rend(); ++it) {
      if (it->report) return it->report;
    }
    return std::nullopt;
  }

  std::vector<ConsensusReport> reports() const {
    std::lock_guard lock(mu_);
    std::vector<ConsensusReport> out;
    for (const auto& r : data_.rounds) {
      if (r.report) out.push_back(*r.report);
    }
    return out;
  }

  bool is_participant(const std::string& handle) const {
    const auto& p = data_.config.participants;
    return std::find(p.begin(), p.end(), handle) != p.end();
  }

  bool is_moderator(const std::string& handle) const { return handle == data_.config.moderator; }

  /// Opens the next round. Values from the previous round are carried over
  /// as unconfirmed defaults.
  int open_round(const std::string& actor) {
    std::lock_guard lock(mu_);
    require_moderator(actor);
    require_not_terminal();
    if (data_.state == SessionState::round_active) {
      throw Error(ErrorCode::conflict, "a round is already active");
    }
    Round next;
    next.number = static_cast<int>(data_.rounds.size()) + 1;
    if (!data_.rounds.empty()) {
      for (const auto& [q, by_participant] : data_.rounds.back().estimates) {
        for (const auto& [p, e] : by_participant) next.estimates[q][p] = {e.value, false};
      }
    }
    data_.rounds.push_back(std::move(next));
    data_.state = SessionState::round_active;
    log("round-opened", std::to_string(data_.rounds.back().number));
    return data_.rounds.back().number;
  }

  /// Records (or overwrites) an estimate in the active round.
  void submit(const std::string& participant, const std::string& quantity, double value) {
    std::lock_guard lock(mu_);
    Round& round = active_round_for(participant, quantity);
    if (!(value >= 0.0 && value <= 1.0)) {
      throw Error(ErrorCode::out_of_range,
                  "estimate for " + quantity + " must lie in [0,1], got " + std::to_string(value),
                  {quantity});
    }
    round.estimates[quantity][participant] = {value, true};
  }

  /// All-or-nothing submit: nothing is recorded unless every item is valid.
  void submit_batch(const std::string& participant,
                    const std::vector<std::pair<std::string, double>>& items) {
    std::lock_guard lock(mu_);
    for (const auto& [quantity, value] : items) {
      active_round_for(participant, quantity);
      if (!(value >= 0.0 && value <= 1.0)) {
        throw Error(ErrorCode::out_of_range,
                    "estimate for " + quantity + " must lie in [0,1], got " + std::to_string(value),
                    {quantity});
      }
    }
    Round& round = data_.rounds.back();
    for (const auto& [quantity, value] : items) round.estimates[quantity][participant] = {value, true};
  }

  /// Affirms a value carried over from the previous round.
  void confirm(const std::string& participant, const std::string& quantity) {
    std::lock_guard lock(mu_);
    Round& round = active_round_for(participant, quantity);
    auto& cells = round.estimates[quantity];
    auto it = cells.find(participant);
    if (it == cells.end()) {
      throw Error(ErrorCode::not_found, "no carried-over value to confirm for " + quantity,
                  {quantity});
    }
    it->second.confirmed = true;
  }

  /// Affirms every carried-over value of `participant`; returns how many.
  int confirm_all(const std::string& participant) {
    std::lock_guard lock(mu_);
    require_active();
    require_participant(participant);
    int n = 0;
    for (auto& [q, cells] : data_.rounds.back().estimates) {
      auto it = cells.find(participant);
      if (it != cells.end() && !it->second.confirmed) {
        it->second.confirmed = true;
        ++n;
      }
    }
    return n;
  }

  /// The participant's own cells in the active round (never anyone else's).
  std::map<std::string, Estimate> own_estimates(const std::string& participant) const {
    std::lock_guard lock(mu_);
    require_participant(participant);
    std::map<std::string, Estimate> out;
    if (data_.rounds.empty()) return out;
    for (const auto& [q, cells] : data_.rounds.back().estimates) {
      auto it = cells.find(participant);
      if (it != cells.end()) out[q] = it->second;
    }
    return out;
  }

  /// Cells blocking the active round from closing, participant-major order.
  std::vector<MissingCell> missing_cells() const {
    std::lock_guard lock(mu_);
    return missing_locked();
  }

  ConsensusReport close_round(const std::string& actor) {
    std::lock_guard lock(mu_);
    require_moderator(actor);
    if (data_.state == SessionState::finalized) {
      throw Error(ErrorCode::session_finalized, "session is finalized");
    }
    if (data_.state != SessionState::round_active) {
      throw Error(ErrorCode::conflict, "no active round to close");
    }
    auto missing = missing_locked();
    if (!missing.empty()) {
      std::vector<std::string> details;
      std::set<std::string> who;
      for (const auto& m : missing) {
        details.push_back(m.participant + " " + (m.unconfirmed ? "unconfirmed " : "missing ") +
                          m.quantity);
        who.insert(m.participant);
      }
      throw Error(ErrorCode::incomplete_round,
                  "round incomplete: " + std::to_string(who.size()) +
                      " participant(s) outstanding, first: " + missing.front().participant,
                  std::move(details));
    }
    Round& round = data_.rounds.back();
    ConsensusReport report;
    report.round = round.number;
    report.overall_reached = true;
    for (const auto& q : data_.config.quantities) {
      std::vector<double> values;
      for (const auto& p : data_.config.participants) {
        values.push_back(round.estimates.at(q.key()).at(p).value);
      }
      report.quantities.push_back(
          aggregate(q.key(), values, data_.config.theta, data_.config.delta));
      report.overall_reached = report.overall_reached && report.quantities.back().reached;
    }
    round.status = RoundStatus::closed;
    round.report = report;
    if (!report.overall_reached && round.number >= data_.config.max_rounds) {
      data_.state = SessionState::deadlocked;
      log("deadlocked", "round cap " + std::to_string(data_.config.max_rounds) + " reached");
    } else {
      data_.state = SessionState::open;
    }
    log("round-closed", std::to_string(round.number) +
                            (report.overall_reached ? " consensus" : " no-consensus"));
    return report;
  }

  /// Final value per quantity is the last round's median; weight medians
  /// are scaled to sum to one. `force` is only honoured on a deadlocked
  /// session and is recorded in the audit trail.
  EstimateSet finalize(const std::string& actor, bool force = false) {
    std::lock_guard lock(mu_);
    require_moderator(actor);
    if (data_.state == SessionState::finalized) {
      throw Error(ErrorCode::session_finalized, "session already finalized");
    }
    if (data_.state == SessionState::round_active) {
      throw Error(ErrorCode::conflict, "close the active round before finalizing");
    }
    const ConsensusReport* last =
        data_.rounds.empty() || !data_.rounds.back().report ? nullptr : &*data_.rounds.back().report;
    if (last == nullptr) {
      throw Error(ErrorCode::consensus_not_reached, "no closed round to finalize from");
    }
    bool forced = false;
    if (data_.state == SessionState::deadlocked) {
      if (!force) {
        throw Error(ErrorCode::deadlocked,
                    "session deadlocked without consensus; forced finalization required");
      }
      forced = true;
    } else if (!last->overall_reached) {
      std::vector<std::string> pending;
      for (const auto& q : last->quantities) {
        if (!q.reached) pending.push_back(q.quantity);
      }
      std::string msg = "consensus not reached for " + std::to_string(pending.size()) + " quantities";
      throw Error(ErrorCode::consensus_not_reached, msg, std::move(pending));
    }

    EstimateSet out;
    out.session_id = data_.config.session_id;
    out.rounds = last->round;
    out.forced = forced;
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < data_.config.quantities.size(); ++i) {
      out.values.push_back({last->quantities[i].quantity, last->quantities[i].median});
      if (data_.config.quantities[i].kind == QuantityKind::weight) {
        weight_sum += last->quantities[i].median;
      }
    }
    bool has_weights = false;
    for (const auto& q : data_.config.quantities) has_weights |= q.kind == QuantityKind::weight;
    if (has_weights) {
      if (!(weight_sum > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "weight medians sum to zero; cannot normalize");
      }
      for (std::size_t i = 0; i < out.values.size(); ++i) {
        if (data_.config.quantities[i].kind == QuantityKind::weight) out.values[i].value /= weight_sum;
      }
    }
    data_.state = SessionState::finalized;
    data_.result = out;
    log(forced ? "finalized-forced" : "finalized", "after round " + std::to_string(out.rounds));
    return out;
  }

 private:
  Session() = default;

  void log(std::string action, std::string detail) {
    data_.audit.push_back({static_cast<int>(data_.audit.size()) + 1, std::move(action),
                           std::move(detail)});
  }

  void require_moderator(const std::string& actor) const {
    if (actor != data_.config.moderator) {
      throw Error(ErrorCode::forbidden, "only the session moderator may do this");
    }
  }

  void require_participant(const std::string& handle) const {
    if (!is_participant(handle)) {
      throw Error(ErrorCode::forbidden, "not a participant of this session");
    }
  }

  void require_not_terminal() const {
    if (data_.state == SessionState::finalized) {
      throw Error(ErrorCode::session_finalized, "session is finalized");
    }
    if (data_.state == SessionState::deadlocked) {
      throw Error(ErrorCode::deadlocked, "session is deadlocked");
    }
  }

  void require_active() const {
    require_not_terminal();
    if (data_.state != SessionState::round_active) {
      throw Error(ErrorCode::conflict, "no round is collecting estimates");
    }
  }

  Round& active_round_for(const std::string& participant, const std::string& quantity) {
    require_active();
    require_participant(participant);
    bool known = std::any_of(data_.config.quantities.begin(), data_.config.quantities.end(),
                             [&](const QuantityRef& q) { return q.key() == quantity; });
    if (!known) {
      throw Error(ErrorCode::not_found, "unknown quantity " + quantity, {quantity});
    }
    return data_.rounds.back();
  }

  std::vector<MissingCell> missing_locked() const {
    std::vector<MissingCell> out;
    if (data_.state != SessionState::round_active) return out;
    const Round& round = data_.rounds.back();
    for (const auto& p : data_.config.participants) {
      for (const auto& q : data_.config.quantities) {
        auto qi = round.estimates.find(q.key());
        if (qi == round.estimates.end() || !qi->second.contains(p)) {
          out.push_back({p, q.key(), false});
        } else if (!qi->second.at(p).confirmed) {
          out.push_back({p, q.key(), true});
        }
      }
    }
    return out;
  }

  mutable std::mutex mu_;
  SessionData data_;
};

}  // namespace csrm::delphi
