#pragma once

// JSON-over-HTTP facade. Every handler parses the request, checks the
// caller's role, delegates to exactly one module operation through the
// Gateway and projects the result into an envelope:
//
//   {"request_id": "...", "payload": {...}}
//   {"request_id": "...", "error": {"code": "...", "message": "...", "details": [...]}}
//
// No arithmetic happens in this layer.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <set>
#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "csrm/delphi.hpp"
#include "csrm/error.hpp"
#include "csrm/json_io.hpp"
#include "csrm/registry.hpp"
#include "csrm/store.hpp"
#include "csrm/treatment.hpp"

namespace csrm::service {

inline constexpr const char* api_base = "/api/v1";
inline constexpr const char* config_format = "csrm.service-config/1";

enum class Role { moderator, participant, viewer };

inline constexpr std::string_view to_string(Role r) noexcept {
  switch (r) {
    case Role::moderator: return "moderator";
    case Role::participant: return "participant";
    case Role::viewer: return "viewer";
  }
  return "?";
}

inline Role parse_role(const std::string& s) {
  if (s == "moderator") return Role::moderator;
  if (s == "participant") return Role::participant;
  if (s == "viewer") return Role::viewer;
  throw Error(ErrorCode::schema, "unknown role '" + s + "'", {s});
}

/// Static bearer token bound to a role and a subject handle (the moderator
/// id or participant handle used in sessions).
struct Identity {
  std::string token;
  Role role = Role::viewer;
  std::string subject;
};

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string store;
  std::vector<Identity> identities;
  int max_long_poll_ms = 30000;
};

inline ServiceConfig config_from_document(const json& doc) {
  require_format(doc, config_format);
  FieldReader f(doc, "");
  ServiceConfig c;
  c.bind = f.string_or("bind", c.bind);
  c.port = static_cast<int>(f.integer_or("port", c.port));
  c.store = f.string_or("store", "");
  c.max_long_poll_ms = static_cast<int>(f.integer_or("max_long_poll_ms", c.max_long_poll_ms));
  if (f.has("tokens")) {
    const json& tokens = f.array("tokens");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      FieldReader t(tokens[i], "tokens[" + std::to_string(i) + "]");
      c.identities.push_back({t.string("token"), parse_role(t.string("role")), t.string("subject")});
    }
  }
  return c;
}

inline std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// The module operations the service may call. Tests substitute
/// recording wrappers to check that every number in a response came from
/// one of these calls.
struct Gateway {
  std::function<AssessmentSnapshot(const OrganizationProfile&, const RiskRegister&,
                                   const ImpactMatrix&, std::optional<double>)>
      assess = [](const OrganizationProfile& p, const RiskRegister& r, const ImpactMatrix& m,
                  std::optional<double> alpha) { return csrm::assess(p, r, m, utc_now(), alpha); };
  std::function<AssessmentSnapshot(const AssessmentSnapshot&, ReductionMatrix,
                                   std::map<std::string, double>, std::vector<std::string>)>
      apply_plan = [](const AssessmentSnapshot& s, ReductionMatrix m,
                      std::map<std::string, double> costs, std::vector<std::string> plan) {
        return csrm::apply_plan(s, std::move(m), std::move(costs), std::move(plan), utc_now());
      };
  std::function<PlanEvaluation(const TreatmentProblem&, std::vector<std::string>, RoundingMode)>
      evaluate = [](const TreatmentProblem& p, std::vector<std::string> plan, RoundingMode mode) {
        return evaluate_plan(p, std::move(plan), mode);
      };
  std::function<OptimizedPlan(const TreatmentProblem&, OptimizeOptions, RoundingMode)> optimize =
      [](const TreatmentProblem& p, OptimizeOptions o, RoundingMode mode) {
        return optimize_plan(p, o, mode);
      };
  std::function<PlanEvaluation(const TreatmentProblem&, const PlanEvaluation&, const std::string&)>
      what_if = [](const TreatmentProblem& p, const PlanEvaluation& e, const std::string& id) {
        return csrm::what_if(p, e, id);
      };
  std::function<MonitoringReport(const AssessmentSnapshot&, const AssessmentSnapshot&)> diff =
      [](const AssessmentSnapshot& a, const AssessmentSnapshot& b) { return diff_snapshots(a, b); };
  std::function<delphi::ConsensusReport(delphi::Session&, const std::string&)> close_round =
      [](delphi::Session& s, const std::string& actor) { return s.close_round(actor); };
  std::function<delphi::EstimateSet(delphi::Session&, const std::string&, bool)> finalize =
      [](delphi::Session& s, const std::string& actor, bool force) { return s.finalize(actor, force); };
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::schema:
    case ErrorCode::unsupported_format:
      return 400;
    case ErrorCode::unauthorized: return 401;
    case ErrorCode::forbidden: return 403;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::session_finalized:
    case ErrorCode::deadlocked:
      return 409;
    case ErrorCode::out_of_range:
    case ErrorCode::structural:
    case ErrorCode::empty_input:
    case ErrorCode::incomplete_round:
    case ErrorCode::consensus_not_reached:
      return 422;
    case ErrorCode::storage: return 503;
    case ErrorCode::internal: return 500;
  }
  return 500;
}

class Service {
 public:
  explicit Service(ServiceConfig config, Gateway gateway = {})
      : config_(std::move(config)), gateway_(std::move(gateway)) {
    if (config_.store.empty()) throw Error(ErrorCode::storage, "no store configured");
    store_ = std::make_unique<Store>(config_.store);
    lock_ = std::make_unique<StoreLock>(store_->root());
    for (const auto& id : store_->list_sessions()) {
      if (auto data = store_->find_session(id)) {
        auto entry = std::make_unique<SessionEntry>();
        entry->session = delphi::Session::restore(std::move(*data));
        sessions_[id] = std::move(entry);
      }
    }
    // httplib's default adds SO_REUSEPORT, which would let a second
    // instance share a busy port silently.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ~Service() { stop(); }

  /// Binds and starts serving on a background thread; returns the port.
  int start() {
    if (config_.port == 0) {
      port_ = server_.bind_to_any_port(config_.bind);
    } else {
      port_ = server_.bind_to_port(config_.bind, config_.port) ? config_.port : -1;
    }
    if (port_ < 0) {
      throw Error(ErrorCode::conflict,
                  "cannot bind " + config_.bind + ":" + std::to_string(config_.port) +
                      " (port busy?)");
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Stops serving and persists every session.
  void stop() {
    if (stopped_.exchange(true)) return;
    shutting_down_ = true;
    {
      std::lock_guard lock(sessions_mu_);
      for (auto& [id, e] : sessions_) e->cv.notify_all();
    }
    server_.stop();
    if (thread_.joinable()) thread_.join();
    std::lock_guard lock(sessions_mu_);
    for (auto& [id, e] : sessions_) {
      std::lock_guard op(e->op_mu);
      store_->put_session(e->session->data());
    }
  }

  int port() const noexcept { return port_; }
  Store& store() { return *store_; }

 private:
  struct SessionEntry {
    std::unique_ptr<delphi::Session> session;
    std::mutex op_mu;  // serializes mutation + persistence
    std::condition_variable cv;
    std::uint64_t revision = 0;
    std::map<std::string, std::pair<std::string, json>> idempotent;  // subject|key -> (body, payload)
  };

  struct Context {
    std::string request_id;
    Identity who;
  };

  using Handler = std::function<json(const httplib::Request&, Context&)>;

  // --- plumbing -------------------------------------------------------------

  std::string next_request_id(const httplib::Request& req) {
    if (req.has_header("X-Request-Id")) return req.get_header_value("X-Request-Id");
    return "req-" + std::to_string(++request_counter_);
  }

  Identity authenticate(const httplib::Request& req) const {
    std::string auth = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (!auth.starts_with(prefix)) throw Error(ErrorCode::unauthorized, "missing bearer token");
    std::string token = auth.substr(prefix.size());
    for (const auto& id : config_.identities) {
      if (id.token == token) return id;
    }
    throw Error(ErrorCode::unauthorized, "unknown token");
  }

  static void require_role(const Context& ctx, std::initializer_list<Role> allowed) {
    for (Role r : allowed) {
      if (ctx.who.role == r) return;
    }
    throw Error(ErrorCode::forbidden,
                "role " + std::string(to_string(ctx.who.role)) + " may not do this");
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    return parse_json_text(req.body, "request body");
  }

  static void reply(httplib::Response& res, const std::string& request_id, int status,
                    const json& envelope) {
    res.status = status;
    res.set_header("X-Request-Id", request_id);
    res.set_content(envelope.dump(), "application/json");
  }

  static json error_body(const Error& e) {
    return json{{"code", to_string(e.code())}, {"message", e.what()}, {"details", e.details()}};
  }

  void handle(httplib::Server::Handler& slot, bool authenticated, Handler fn) {
    slot = [this, authenticated, fn = std::move(fn)](const httplib::Request& req,
                                                     httplib::Response& res) {
      Context ctx;
      ctx.request_id = next_request_id(req);
      try {
        if (authenticated) ctx.who = authenticate(req);
        json payload = fn(req, ctx);
        reply(res, ctx.request_id, 200, {{"request_id", ctx.request_id}, {"payload", payload}});
      } catch (const Error& e) {
        reply(res, ctx.request_id, http_status(e.code()),
              {{"request_id", ctx.request_id}, {"error", error_body(e)}});
      } catch (const json::exception& e) {
        Error err(ErrorCode::schema, std::string("malformed request: ") + e.what());
        reply(res, ctx.request_id, 400, {{"request_id", ctx.request_id}, {"error", error_body(err)}});
      } catch (const std::exception& e) {
        Error err(ErrorCode::internal, e.what());
        reply(res, ctx.request_id, 500, {{"request_id", ctx.request_id}, {"error", error_body(err)}});
      }
    };
  }

  void get(const std::string& pattern, Handler fn, bool authenticated = true) {
    httplib::Server::Handler h;
    handle(h, authenticated, std::move(fn));
    server_.Get(api_base + pattern, std::move(h));
    endpoints_.push_back({"GET", pattern});
  }
  void post(const std::string& pattern, Handler fn) {
    httplib::Server::Handler h;
    handle(h, true, std::move(fn));
    server_.Post(api_base + pattern, std::move(h));
    endpoints_.push_back({"POST", pattern});
  }
  void put(const std::string& pattern, Handler fn) {
    httplib::Server::Handler h;
    handle(h, true, std::move(fn));
    server_.Put(api_base + pattern, std::move(h));
    endpoints_.push_back({"PUT", pattern});
  }
  void del(const std::string& pattern, Handler fn) {
    httplib::Server::Handler h;
    handle(h, true, std::move(fn));
    server_.Delete(api_base + pattern, std::move(h));
    endpoints_.push_back({"DELETE", pattern});
  }

  static std::optional<std::int64_t> expected_version(const httplib::Request& req, const json& body) {
    if (req.has_header("If-Match")) {
      try {
        return std::stoll(req.get_header_value("If-Match"));
      } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_argument, "If-Match must be a version number");
      }
    }
    if (body.contains("expected_version") && body["expected_version"].is_number_integer()) {
      return body["expected_version"].get<std::int64_t>();
    }
    return std::nullopt;
  }

  SessionEntry& entry(const std::string& id) {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, "no session " + id, {id});
    return *it->second;
  }

  // Runs `fn` under the session's op lock, then persists and bumps the
  // revision so long-pollers wake up.
  template <typename Fn>
  json mutate(SessionEntry& e, Fn&& fn) {
    std::unique_lock op(e.op_mu);
    json out = fn();
    store_->put_session(e.session->data());
    ++e.revision;
    op.unlock();
    e.cv.notify_all();
    return out;
  }

  json session_view(SessionEntry& e, const Context& ctx) {
    const delphi::Session& s = *e.session;
    delphi::SessionData data = s.data();
    json reports = json::array();
    for (const auto& r : s.reports()) reports.push_back(r);
    json quantities = json::array();
    for (const auto& q : data.config.quantities) quantities.push_back(q.key());
    json view = {{"session_id", data.config.session_id},
                 {"state", to_string(data.state)},
                 {"round", data.rounds.empty() ? 0 : data.rounds.back().number},
                 {"max_rounds", data.config.max_rounds},
                 {"theta", data.config.theta},
                 {"delta", data.config.delta},
                 {"quantities", quantities},
                 {"participant_count", data.config.participants.size()},
                 {"reports", reports},
                 {"revision", e.revision}};
    auto missing = s.missing_cells();
    std::set<std::string> outstanding;
    for (const auto& m : missing) outstanding.insert(m.participant);
    view["outstanding_participants"] = outstanding.size();
    if (data.result) view["result"] = *data.result;
    if (ctx.who.role == Role::moderator) {
      view["moderator"] = data.config.moderator;
      view["participants"] = data.config.participants;
      json cells = json::array();
      for (const auto& m : missing) {
        cells.push_back({{"participant", m.participant}, {"quantity", m.quantity},
                         {"unconfirmed", m.unconfirmed}});
      }
      view["missing"] = cells;
      json audit = json::array();
      for (const auto& a : data.audit) {
        audit.push_back({{"sequence", a.sequence}, {"action", a.action}, {"detail", a.detail}});
      }
      view["audit"] = audit;
    } else if (ctx.who.role == Role::participant && s.is_participant(ctx.who.subject)) {
      json own = json::object();
      for (const auto& [q, est] : s.own_estimates(ctx.who.subject)) {
        own[q] = {{"value", est.value}, {"confirmed", est.confirmed}};
      }
      view["own_estimates"] = own;
    }
    return view;
  }

  TreatmentProblem problem_from(const json& body, const AssessmentSnapshot& snap) {
    FieldReader f(body, "");
    ReductionMatrix reductions;
    if (f.has("reductions_csv")) {
      RiskRegister reg{snap.org_id, 0, snap.risks};
      reductions = import_reduction_matrix(f.string("reductions_csv"), reg);
    } else {
      reductions = read_reductions(FieldReader(f.at("reductions"), "reductions"));
    }
    std::map<std::string, double> costs;
    if (f.has("costs")) {
      const json& c = f.at("costs");
      if (!c.is_object()) FieldReader::fail("costs", "expected an object");
      for (const auto& [k, v] : c.items()) {
        if (!v.is_number()) FieldReader::fail("costs." + k, "expected a number");
        costs[k] = v.get<double>();
      }
    }
    return snap.treatment_problem(std::move(reductions), std::move(costs));
  }

  // --- routes ---------------------------------------------------------------

  void routes() {
    get("/health", [](const httplib::Request&, Context&) { return json{{"status", "ok"}}; }, false);

    get("/schema", [this](const httplib::Request&, Context&) {
      json eps = json::array();
      for (const auto& [m, p] : endpoints_) eps.push_back({{"method", m}, {"path", api_base + p}});
      json codes = json::array();
      for (auto c : all_error_codes) {
        codes.push_back({{"code", to_string(c)}, {"http_status", http_status(c)}});
      }
      return json{{"api", "csrm"},
                  {"version", 1},
                  {"endpoints", eps},
                  {"error_codes", codes},
                  {"roles", {"moderator", "participant", "viewer"}},
                  {"formats",
                   {profile_format, register_format, catalog_format, session_format,
                    snapshot_format, estimates_format, "csrm.delphi-state/1", "csrm.monitoring/1"}}};
    }, false);

    // Profiles
    get("/profiles", [this](const httplib::Request&, Context&) {
      return json{{"profiles", store_->list_profiles()}};
    });
    get(R"(/profiles/([^/]+))", [this](const httplib::Request& req, Context&) {
      return to_document(store_->get_profile(req.matches[1]));
    });
    auto write_profile = [this](const httplib::Request& req, Context& ctx, bool create) {
      require_role(ctx, {Role::moderator});
      json body = body_of(req);
      json doc = body.contains("document") ? body["document"] : body;
      auto profile = profile_from_document(doc);
      if (req.matches.size() > 1 && profile.org_id != req.matches[1].str()) {
        throw Error(ErrorCode::invalid_argument, "org_id does not match the resource path");
      }
      auto expected = create ? std::optional<std::int64_t>(0) : expected_version(req, body);
      return to_document(store_->put_profile(std::move(profile), expected));
    };
    post("/profiles", [write_profile](const httplib::Request& req, Context& ctx) {
      return write_profile(req, ctx, true);
    });
    put(R"(/profiles/([^/]+))", [write_profile](const httplib::Request& req, Context& ctx) {
      return write_profile(req, ctx, false);
    });
    del(R"(/profiles/([^/]+))", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      store_->delete_profile(req.matches[1]);
      return json{{"deleted", req.matches[1].str()}};
    });

    // Risk registers
    get("/registers", [this](const httplib::Request&, Context&) {
      return json{{"registers", store_->list_registers()}};
    });
    get(R"(/registers/([^/]+))", [this](const httplib::Request& req, Context&) {
      return to_document(store_->get_register(req.matches[1]));
    });
    auto write_register = [this](const httplib::Request& req, Context& ctx, bool create) {
      require_role(ctx, {Role::moderator});
      json body = body_of(req);
      json doc = body.contains("document") ? body["document"] : body;
      auto reg = register_from_document(doc);
      if (req.matches.size() > 1 && reg.org_id != req.matches[1].str()) {
        throw Error(ErrorCode::invalid_argument, "org_id does not match the resource path");
      }
      auto expected = create ? std::optional<std::int64_t>(0) : expected_version(req, body);
      return to_document(store_->put_register(std::move(reg), expected));
    };
    post("/registers", [write_register](const httplib::Request& req, Context& ctx) {
      return write_register(req, ctx, true);
    });
    put(R"(/registers/([^/]+))", [write_register](const httplib::Request& req, Context& ctx) {
      return write_register(req, ctx, false);
    });
    del(R"(/registers/([^/]+))", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      store_->delete_register(req.matches[1]);
      return json{{"deleted", req.matches[1].str()}};
    });

    // Sessions
    get("/sessions", [this](const httplib::Request&, Context&) {
      std::lock_guard lock(sessions_mu_);
      json ids = json::array();
      for (const auto& [id, e] : sessions_) ids.push_back(id);
      return json{{"sessions", ids}};
    });
    post("/sessions", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      json body = body_of(req);
      json doc = body;
      doc["format"] = session_format;
      if (!doc.contains("moderator")) doc["moderator"] = ctx.who.subject;
      auto config = session_from_document(doc);
      if (config.moderator != ctx.who.subject) {
        throw Error(ErrorCode::forbidden, "sessions are created with the caller as moderator");
      }
      if (body.contains("org_id")) {
        std::string org = body["org_id"].get<std::string>();
        auto profile = store_->get_profile(org);
        auto reg = store_->get_register(org);
        std::vector<std::string> cms = body.value("countermeasures", std::vector<std::string>{});
        delphi::require_targets_resolve(config, profile.objectives, reg.risks, cms);
      }
      auto e = std::make_unique<SessionEntry>();
      e->session = std::make_unique<delphi::Session>(config);
      {
        std::lock_guard lock(sessions_mu_);
        if (sessions_.contains(config.session_id)) {
          throw Error(ErrorCode::conflict, "session " + config.session_id + " exists");
        }
        store_->put_session(e->session->data());
        sessions_[config.session_id] = std::move(e);
      }
      return session_view(entry(config.session_id), ctx);
    });
    get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, Context& ctx) {
      return session_view(entry(req.matches[1]), ctx);
    });
    get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, Context& ctx) {
      SessionEntry& e = entry(req.matches[1]);
      std::uint64_t since = req.has_param("since") ? std::stoull(req.get_param_value("since")) : 0;
      int timeout = req.has_param("timeout_ms") ? std::stoi(req.get_param_value("timeout_ms"))
                                                : config_.max_long_poll_ms;
      timeout = std::clamp(timeout, 0, config_.max_long_poll_ms);
      {
        std::unique_lock op(e.op_mu);
        e.cv.wait_for(op, std::chrono::milliseconds(timeout),
                      [&] { return e.revision > since || shutting_down_.load(); });
      }
      return session_view(e, ctx);
    });
    post(R"(/sessions/([^/]+)/rounds)", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      SessionEntry& e = entry(req.matches[1]);
      return mutate(e, [&] { return json{{"round", e.session->open_round(ctx.who.subject)}}; });
    });
    auto submit = [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::participant});
      SessionEntry& e = entry(req.matches[1]);
      json body = body_of(req);
      if (body.contains("participant") && body["participant"] != ctx.who.subject) {
        throw Error(ErrorCode::forbidden, "participants may only submit their own estimates");
      }
      json items = body.contains("estimates") ? body["estimates"] : json::array({body});
      if (!items.is_array()) FieldReader::fail("estimates", "expected an array");
      std::vector<std::pair<std::string, double>> batch;
      for (std::size_t i = 0; i < items.size(); ++i) {
        FieldReader f(items[i], "estimates[" + std::to_string(i) + "]");
        batch.emplace_back(f.string("quantity"), f.number("value"));
      }
      std::string key = req.get_header_value("Idempotency-Key");
      std::string cache_key = ctx.who.subject + "|" + key;
      std::unique_lock op(e.op_mu);
      if (!key.empty()) {
        auto it = e.idempotent.find(cache_key);
        if (it != e.idempotent.end()) {
          if (it->second.first != body.dump()) {
            throw Error(ErrorCode::conflict, "idempotency key reused with a different request");
          }
          return it->second.second;
        }
      }
      e.session->submit_batch(ctx.who.subject, batch);
      json accepted = json::array();
      for (const auto& [q, v] : batch) accepted.push_back(q);
      json payload = {{"round", e.session->round_number()}, {"accepted", accepted}};
      if (!key.empty()) e.idempotent[cache_key] = {body.dump(), payload};
      store_->put_session(e.session->data());
      ++e.revision;
      op.unlock();
      e.cv.notify_all();
      return payload;
    };
    post(R"(/sessions/([^/]+)/rounds/current/estimates)", submit);
    put(R"(/sessions/([^/]+)/rounds/current/estimates)", submit);
    post(R"(/sessions/([^/]+)/rounds/current/confirm)", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::participant});
      SessionEntry& e = entry(req.matches[1]);
      json body = body_of(req);
      return mutate(e, [&] {
        if (body.contains("quantity")) {
          e.session->confirm(ctx.who.subject, body["quantity"].get<std::string>());
          return json{{"confirmed", 1}};
        }
        return json{{"confirmed", e.session->confirm_all(ctx.who.subject)}};
      });
    });
    post(R"(/sessions/([^/]+)/rounds/current/close)", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      SessionEntry& e = entry(req.matches[1]);
      return mutate(e, [&] { return json(gateway_.close_round(*e.session, ctx.who.subject)); });
    });
    get(R"(/sessions/([^/]+)/rounds/(\d+)/estimates)", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      SessionEntry& e = entry(req.matches[1]);
      if (!e.session->is_moderator(ctx.who.subject)) {
        throw Error(ErrorCode::forbidden, "only the session moderator may list raw estimates");
      }
      int n = std::stoi(req.matches[2]);
      auto data = e.session->data();
      if (n < 1 || n > static_cast<int>(data.rounds.size())) {
        throw Error(ErrorCode::not_found, "no round " + std::to_string(n));
      }
      json est = json::object();
      for (const auto& [q, cells] : data.rounds[n - 1].estimates) {
        for (const auto& [p, v] : cells) est[q][p] = {{"value", v.value}, {"confirmed", v.confirmed}};
      }
      return json{{"round", n}, {"estimates", est}};
    });
    post(R"(/sessions/([^/]+)/finalize)", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      SessionEntry& e = entry(req.matches[1]);
      json body = body_of(req);
      bool force = body.value("force", false);
      return mutate(e, [&] { return json(gateway_.finalize(*e.session, ctx.who.subject, force)); });
    });

    // Assessments
    post("/assessments", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      json body = body_of(req);
      FieldReader f(body, "");
      std::string org = f.string("org_id");
      auto profile = store_->get_profile(org);
      auto reg = store_->get_register(org);
      ImpactMatrix impact = f.has("impact_csv")
                                ? import_impact_matrix(f.string("impact_csv"), profile, reg)
                                : read_impact(FieldReader(f.at("impact"), "impact"));
      std::optional<double> alpha;
      if (f.has("alpha_override")) alpha = f.unit("alpha_override");
      auto snap = gateway_.assess(profile, reg, impact, alpha);
      store_->record_snapshot(snap);
      return to_document(snap);
    });
    get("/assessments", [this](const httplib::Request&, Context&) {
      return json{{"snapshots", store_->list_snapshots()}};
    });
    get(R"(/assessments/([^/]+))", [this](const httplib::Request& req, Context&) {
      return to_document(store_->get_snapshot(req.matches[1]));
    });

    // Treatment
    post("/treatment/evaluate", [this](const httplib::Request& req, Context&) {
      json body = body_of(req);
      FieldReader f(body, "");
      auto snap = store_->get_snapshot(f.string("snapshot_id"));
      auto mode = parse_rounding_mode(f.string_or("rounding", "full"));
      return json(gateway_.evaluate(problem_from(body, snap), f.strings("plan"), mode));
    });
    post("/treatment/optimize", [this](const httplib::Request& req, Context&) {
      json body = body_of(req);
      FieldReader f(body, "");
      auto snap = store_->get_snapshot(f.string("snapshot_id"));
      OptimizeOptions opts;
      opts.mode = parse_optimize_mode(f.string_or("mode", "exact"));
      auto mode = parse_rounding_mode(f.string_or("rounding", "full"));
      auto result = gateway_.optimize(problem_from(body, snap), opts, mode);
      return json{{"plan", result.plan}, {"evaluation", result.evaluation}};
    });
    post("/treatment/what-if", [this](const httplib::Request& req, Context&) {
      json body = body_of(req);
      FieldReader f(body, "");
      auto snap = store_->get_snapshot(f.string("snapshot_id"));
      auto problem = problem_from(body, snap);
      auto mode = parse_rounding_mode(f.string_or("rounding", "full"));
      auto current = gateway_.evaluate(problem, f.strings("plan"), mode);
      return json(gateway_.what_if(problem, current, f.string("toggle")));
    });
    post("/treatment/apply", [this](const httplib::Request& req, Context& ctx) {
      require_role(ctx, {Role::moderator});
      json body = body_of(req);
      FieldReader f(body, "");
      auto snap = store_->get_snapshot(f.string("snapshot_id"));
      auto problem = problem_from(body, snap);
      auto treated = gateway_.apply_plan(snap, problem.reductions, problem.costs, f.strings("plan"));
      store_->record_snapshot(treated);
      return to_document(treated);
    });

    // Monitoring
    get("/monitoring/diff", [this](const httplib::Request& req, Context&) {
      if (!req.has_param("before") || !req.has_param("after")) {
        throw Error(ErrorCode::invalid_argument, "before and after snapshot ids are required");
      }
      auto a = store_->get_snapshot(req.get_param_value("before"));
      auto b = store_->get_snapshot(req.get_param_value("after"));
      return to_document(gateway_.diff(a, b));
    });
  }

  ServiceConfig config_;
  Gateway gateway_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<StoreLock> lock_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<bool> stopped_{false};
  std::atomic<bool> shutting_down_{false};
  std::atomic<std::uint64_t> request_counter_{0};
  std::mutex sessions_mu_;
  std::map<std::string, std::unique_ptr<SessionEntry>> sessions_;
  std::vector<std::pair<std::string, std::string>> endpoints_;
};

}  // namespace csrm::service
