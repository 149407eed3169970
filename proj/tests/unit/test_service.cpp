#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <set>

#include <httplib.h>

#include "at_case.hpp"
#include "cases.hpp"
#include "csrm/service.hpp"
#include "temp_dir.hpp"

using namespace csrm;
using namespace std::chrono_literals;

namespace {

struct Reply {
  int status = 0;
  json body;
  std::string request_id;

  const json& payload() const { return body.at("payload"); }
  std::string code() const { return body.contains("error") ? body["error"]["code"].get<std::string>() : ""; }
};

service::ServiceConfig test_config(const std::string& store) {
  auto cfg = service::config_from_document(read_json(at::fixture("service/config.json")));
  cfg.store = store;
  cfg.port = 0;
  cfg.max_long_poll_ms = 5000;
  return cfg;
}

class Api {
 public:
  explicit Api(int port) : client_("127.0.0.1", port) { client_.set_read_timeout(10, 0); }

  Reply call(const std::string& method, const std::string& path, const std::string& token,
             const json& body = nullptr, httplib::Headers headers = {}) {
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    std::string full = std::string(service::api_base) + path;
    std::string text = body.is_null() ? "" : body.dump();
    httplib::Result res;
    if (method == "GET") {
      res = client_.Get(full, headers);
    } else if (method == "POST") {
      res = client_.Post(full, headers, text, "application/json");
    } else if (method == "PUT") {
      res = client_.Put(full, headers, text, "application/json");
    } else {
      res = client_.Delete(full, headers);
    }
    if (!res) throw std::runtime_error("no response for " + method + " " + path);
    return {res->status, json::parse(res->body), res->get_header_value("X-Request-Id")};
  }

  Reply get(const std::string& path, const std::string& token) { return call("GET", path, token); }
  Reply post(const std::string& path, const std::string& token, const json& body = json::object(),
             httplib::Headers headers = {}) {
    return call("POST", path, token, body, std::move(headers));
  }

 private:
  httplib::Client client_;
};

std::string token_of(const std::string& participant) { return participant + "-token"; }

// Every AT quantity as all seven experts estimated it.
json at_estimates(const json& quantities) {
  json out = json::array();
  auto p = at::profile();
  auto r = at::risks();
  auto m = at::impact();
  for (const auto& qj : quantities) {
    auto q = delphi::QuantityRef::parse(qj.get<std::string>());
    double v = 0.0;
    if (q.kind == delphi::QuantityKind::weight) {
      for (const auto& o : p.objectives) {
        if (o.id == q.target) v = o.weight;
      }
    } else if (q.kind == delphi::QuantityKind::likelihood) {
      for (const auto& x : r.risks) {
        if (x.id == q.target) v = x.likelihood;
      }
    } else {
      v = m.at(q.target, q.secondary);
    }
    out.push_back({{"quantity", q.key()}, {"value", v}});
  }
  return out;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override { boot(); }

  void boot(service::Gateway gateway = {}) {
    svc.reset();
    svc = std::make_unique<service::Service>(test_config(dir.file("store")), std::move(gateway));
    api = std::make_unique<Api>(svc->start());
  }

  void seed_at() {
    ASSERT_EQ(api->post("/profiles", "mod-token", read_json(at::fixture("at/profile.json"))).status, 200);
    ASSERT_EQ(api->post("/registers", "mod-token", read_json(at::fixture("at/risks.json"))).status, 200);
  }

  std::string assess_at() {
    auto r = api->post("/assessments", "mod-token",
                       {{"org_id", "AT"}, {"impact_csv", read_text(at::fixture("at/impact.csv"))}});
    EXPECT_EQ(r.status, 200) << r.body.dump();
    return r.payload()["snapshot_id"];
  }

  json treatment_body(const std::string& snapshot, json plan) {
    return {{"snapshot_id", snapshot},
            {"reductions_csv", read_text(at::fixture("at/reductions.csv"))},
            {"plan", std::move(plan)}};
  }

  void create_session(const std::string& fixture) {
    auto r = api->post("/sessions", "mod-token", read_json(at::fixture(fixture)));
    ASSERT_EQ(r.status, 200) << r.body.dump();
  }

  TempDir dir;
  std::unique_ptr<service::Service> svc;
  std::unique_ptr<Api> api;
};

}  // namespace

TEST_F(ServiceTest, HealthAndSchemaNeedNoToken) {
  auto h = api->get("/health", "");
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.payload()["status"], "ok");
  auto s = api->get("/schema", "");
  EXPECT_EQ(s.status, 200);
  std::set<std::string> codes;
  for (const auto& c : s.payload()["error_codes"]) codes.insert(c["code"].get<std::string>());
  EXPECT_TRUE(codes.contains("out_of_range"));
  EXPECT_TRUE(codes.contains("deadlocked"));
}

TEST_F(ServiceTest, TokensAreRequired) {
  auto none = api->get("/profiles", "");
  EXPECT_EQ(none.status, 401);
  EXPECT_EQ(none.code(), "unauthorized");
  EXPECT_EQ(api->get("/profiles", "forged").status, 401);
  EXPECT_EQ(api->get("/profiles", "viewer-token").status, 200);
}

TEST_F(ServiceTest, RequestIdIsEchoedOrGenerated) {
  auto r = api->call("GET", "/health", "", nullptr, {{"X-Request-Id", "trace-42"}});
  EXPECT_EQ(r.request_id, "trace-42");
  EXPECT_EQ(r.body["request_id"], "trace-42");
  auto err = api->call("GET", "/profiles/XX", "mod-token", nullptr, {{"X-Request-Id", "trace-43"}});
  EXPECT_EQ(err.status, 404);
  EXPECT_EQ(err.body["request_id"], "trace-43");
  auto gen = api->get("/health", "");
  EXPECT_TRUE(gen.request_id.starts_with("req-"));
  EXPECT_EQ(gen.body["request_id"], gen.request_id);
}

TEST_F(ServiceTest, ProfileVersionsGuardAgainstLostUpdates) {
  json doc = read_json(at::fixture("at/profile.json"));
  EXPECT_EQ(api->post("/profiles", "viewer-token", doc).status, 403);
  EXPECT_EQ(api->post("/profiles", "e1-token", doc).status, 403);
  auto created = api->post("/profiles", "mod-token", doc);
  ASSERT_EQ(created.status, 200);
  EXPECT_EQ(created.payload()["version"], 1);
  EXPECT_EQ(api->post("/profiles", "mod-token", doc).status, 409);
  auto updated = api->call("PUT", "/profiles/AT", "mod-token", doc, {{"If-Match", "1"}});
  EXPECT_EQ(updated.status, 200);
  EXPECT_EQ(updated.payload()["version"], 2);
  auto stale = api->call("PUT", "/profiles/AT", "mod-token", doc, {{"If-Match", "1"}});
  EXPECT_EQ(stale.status, 409);
  EXPECT_EQ(stale.code(), "conflict");
  doc["objectives"][0]["weight"] = 0.9;
  auto bad = api->call("PUT", "/profiles/AT", "mod-token", doc, {{"If-Match", "2"}});
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(bad.code(), "schema");
  EXPECT_EQ(api->call("DELETE", "/profiles/AT", "mod-token").status, 200);
  EXPECT_EQ(api->get("/profiles/AT", "mod-token").status, 404);
}

TEST_F(ServiceTest, AssessmentReproducesTheCaseStudy) {
  seed_at();
  auto id = assess_at();
  auto snap = snapshot_from_document(api->get("/assessments/" + id, "viewer-token").payload());
  ASSERT_EQ(snap.levels.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(snap.levels[i].level, at::levels[i], 1e-12);
  EXPECT_NEAR(snap.grl, at::grl, 1e-12);
  EXPECT_EQ(snap.snapshot_id, at::snapshot().snapshot_id);
  EXPECT_EQ(api->post("/assessments", "viewer-token", {{"org_id", "AT"}}).status, 403);
}

TEST_F(ServiceTest, TreatmentEvaluateOptimizeWhatIfApply) {
  seed_at();
  auto id = assess_at();
  auto ev = api->post("/treatment/evaluate", "viewer-token", treatment_body(id, {"c1", "c2", "c3"}));
  ASSERT_EQ(ev.status, 200) << ev.body.dump();
  EXPECT_NEAR(ev.payload()["grl_after"].get<double>(), at::grl_after, 1e-12);
  EXPECT_TRUE(ev.payload()["feasible"].get<bool>());

  auto opt = api->post("/treatment/optimize", "viewer-token", treatment_body(id, json::array()));
  ASSERT_EQ(opt.status, 200);
  EXPECT_EQ(opt.payload()["plan"]["countermeasures"], json({"c1", "c3"}));

  auto body = treatment_body(id, {"c1", "c3"});
  body["toggle"] = "c2";
  auto wi = api->post("/treatment/what-if", "viewer-token", body);
  ASSERT_EQ(wi.status, 200);
  const auto& r1 = wi.payload()["risks"][0];
  EXPECT_EQ(r1["risk"], "r1");
  EXPECT_NEAR(r1["crr"].get<double>(), 0.98, 1e-12);

  auto unknown = api->post("/treatment/evaluate", "viewer-token", treatment_body(id, {"c9"}));
  EXPECT_EQ(unknown.status, 404) << unknown.body.dump();
  EXPECT_EQ(unknown.body["error"]["details"], json({"c9"}));

  EXPECT_EQ(api->post("/treatment/apply", "viewer-token", treatment_body(id, {"c1"})).status, 403);
  auto applied = api->post("/treatment/apply", "mod-token", treatment_body(id, {"c1", "c2", "c3"}));
  ASSERT_EQ(applied.status, 200);
  std::string treated = applied.payload()["snapshot_id"];

  ASSERT_EQ(api->call("PUT", "/registers/AT", "mod-token", read_json(at::fixture("at/risks-q2.json")),
                      {{"If-Match", "1"}})
                .status,
            200);
  auto q2 = api->post("/assessments", "mod-token",
                      {{"org_id", "AT"}, {"impact_csv", read_text(at::fixture("at/impact-q2.csv"))}});
  ASSERT_EQ(q2.status, 200) << q2.body.dump();
  std::string after = q2.payload()["snapshot_id"];
  auto diff = api->get("/monitoring/diff?before=" + treated + "&after=" + after, "viewer-token");
  ASSERT_EQ(diff.status, 200);
  EXPECT_EQ(diff.payload()["added"], json({"r6"}));
  EXPECT_EQ(diff.payload()["flips"][0]["risk"], "r1");
}

TEST_F(ServiceTest, RawEstimatesAreModeratorOnly) {
  create_session("at/delphi/session.json");
  ASSERT_EQ(api->post("/sessions/at-phase3/rounds", "mod-token").status, 200);
  auto view = api->get("/sessions/at-phase3", "mod-token").payload();
  ASSERT_EQ(api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                      {{"estimates", at_estimates(view["quantities"])}})
                .status,
            200);
  auto listing = api->get("/sessions/at-phase3/rounds/1/estimates", "e1-token");
  EXPECT_EQ(listing.status, 403);
  EXPECT_EQ(listing.code(), "forbidden");
  EXPECT_EQ(api->get("/sessions/at-phase3/rounds/1/estimates", "viewer-token").status, 403);
  auto mod = api->get("/sessions/at-phase3/rounds/1/estimates", "mod-token");
  ASSERT_EQ(mod.status, 200);
  EXPECT_TRUE(mod.payload()["estimates"]["weight:o1"].contains("e1"));

  auto mine = api->get("/sessions/at-phase3", "e1-token").payload();
  EXPECT_FALSE(mine.contains("participants"));
  EXPECT_FALSE(mine.contains("missing"));
  EXPECT_FALSE(mine.contains("audit"));
  EXPECT_EQ(mine["own_estimates"].size(), 29u);
  auto other = api->get("/sessions/at-phase3", "e2-token").payload();
  EXPECT_TRUE(other["own_estimates"].empty());
  EXPECT_EQ(other["outstanding_participants"], 6);
  auto viewer = api->get("/sessions/at-phase3", "viewer-token").payload();
  EXPECT_FALSE(viewer.contains("own_estimates"));
  EXPECT_EQ(viewer.dump().find("\"e1\""), std::string::npos);
}

TEST_F(ServiceTest, ParticipantsCannotImpersonate) {
  create_session("at/delphi/session.json");
  api->post("/sessions/at-phase3/rounds", "mod-token");
  auto r = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                     {{"participant", "e2"}, {"quantity", "weight:o1"}, {"value", 0.2}});
  EXPECT_EQ(r.status, 403);
  EXPECT_EQ(api->post("/sessions/at-phase3/rounds/current/estimates", "mod-token",
                      {{"quantity", "weight:o1"}, {"value", 0.2}})
                .status,
            403);
  EXPECT_EQ(api->post("/sessions/at-phase3/rounds/current/close", "e1-token").status, 403);
}

TEST_F(ServiceTest, SubmitIsIdempotentPerKey) {
  create_session("at/delphi/session.json");
  api->post("/sessions/at-phase3/rounds", "mod-token");
  json body = {{"quantity", "weight:o1"}, {"value", 0.2}};
  httplib::Headers key{{"Idempotency-Key", "k-1"}};
  auto first = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token", body, key);
  ASSERT_EQ(first.status, 200);
  int rev = api->get("/sessions/at-phase3", "mod-token").payload()["revision"];
  auto again = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token", body, key);
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(again.payload(), first.payload());
  EXPECT_EQ(api->get("/sessions/at-phase3", "mod-token").payload()["revision"], rev);
  auto changed = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                           {{"quantity", "weight:o1"}, {"value", 0.3}}, key);
  EXPECT_EQ(changed.status, 409);
  // Keys are scoped per caller.
  EXPECT_EQ(api->post("/sessions/at-phase3/rounds/current/estimates", "e2-token", body, key).status, 200);
}

TEST_F(ServiceTest, OutOfRangeEstimateIsRejectedAtomically) {
  create_session("at/delphi/session.json");
  api->post("/sessions/at-phase3/rounds", "mod-token");
  auto r = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                     {{"quantity", "weight:o1"}, {"value", 1.5}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.code(), "out_of_range");
  auto batch = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                         {{"estimates", {{{"quantity", "weight:o1"}, {"value", 0.2}},
                                         {{"quantity", "weight:o2"}, {"value", -0.1}}}}});
  EXPECT_EQ(batch.status, 422);
  EXPECT_TRUE(api->get("/sessions/at-phase3", "e1-token").payload()["own_estimates"].empty());
  auto unknown = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                           {{"quantity", "weight:o9"}, {"value", 0.2}});
  EXPECT_EQ(unknown.status, 404);
  auto malformed = api->post("/sessions/at-phase3/rounds/current/estimates", "e1-token",
                             {{"quantity", "weight:o1"}, {"value", "high"}});
  EXPECT_EQ(malformed.status, 400);
}

TEST_F(ServiceTest, FullRoundReachesConsensusAndSecondCloseConflicts) {
  create_session("at/delphi/session.json");
  api->post("/sessions/at-phase3/rounds", "mod-token");
  auto early = api->post("/sessions/at-phase3/rounds/current/close", "mod-token");
  EXPECT_EQ(early.status, 422);
  EXPECT_EQ(early.code(), "incomplete_round");
  auto quantities = api->get("/sessions/at-phase3", "mod-token").payload()["quantities"];
  for (int i = 1; i <= 7; ++i) {
    auto r = api->post("/sessions/at-phase3/rounds/current/estimates", token_of("e" + std::to_string(i)),
                       {{"estimates", at_estimates(quantities)}});
    ASSERT_EQ(r.status, 200);
  }
  auto closed = api->post("/sessions/at-phase3/rounds/current/close", "mod-token");
  ASSERT_EQ(closed.status, 200) << closed.body.dump();
  EXPECT_TRUE(closed.payload()["overall_reached"].get<bool>());
  auto retry = api->post("/sessions/at-phase3/rounds/current/close", "mod-token");
  EXPECT_EQ(retry.status, 409);
  EXPECT_EQ(retry.code(), "conflict");

  auto fin = api->post("/sessions/at-phase3/finalize", "mod-token");
  ASSERT_EQ(fin.status, 200);
  EXPECT_FALSE(fin.payload()["forced"].get<bool>());
  EXPECT_EQ(api->post("/sessions/at-phase3/rounds", "mod-token").code(), "session_finalized");
  auto view = api->get("/sessions/at-phase3", "viewer-token").payload();
  EXPECT_EQ(view["state"], "finalized");
  EXPECT_EQ(view["result"]["values"].size(), 29u);
}

TEST_F(ServiceTest, DeadlockNeedsForcedFinalize) {
  create_session("at/delphi/split-session.json");
  auto id = api->get("/sessions", "mod-token").payload()["sessions"][0].get<std::string>();
  for (int round = 1; round <= 2; ++round) {
    ASSERT_EQ(api->post("/sessions/" + id + "/rounds", "mod-token").status, 200);
    for (int i = 1; i <= 7; ++i) {
      double v = i <= 3 ? 0.2 : 0.8;
      api->post("/sessions/" + id + "/rounds/current/estimates", token_of("e" + std::to_string(i)),
                {{"quantity", "likelihood:r1"}, {"value", v}});
    }
    auto c = api->post("/sessions/" + id + "/rounds/current/close", "mod-token");
    ASSERT_EQ(c.status, 200);
    EXPECT_FALSE(c.payload()["overall_reached"].get<bool>());
  }
  EXPECT_EQ(api->get("/sessions/" + id, "viewer-token").payload()["state"], "deadlocked");
  auto refused = api->post("/sessions/" + id + "/finalize", "mod-token");
  EXPECT_EQ(refused.status, 409);
  EXPECT_EQ(refused.code(), "deadlocked");
  auto forced = api->post("/sessions/" + id + "/finalize", "mod-token", {{"force", true}});
  ASSERT_EQ(forced.status, 200);
  EXPECT_TRUE(forced.payload()["forced"].get<bool>());
  EXPECT_EQ(forced.payload()["values"][0]["value"], 0.8);
}

TEST_F(ServiceTest, LongPollWakesOnChange) {
  create_session("at/delphi/session.json");
  int rev = api->get("/sessions/at-phase3", "viewer-token").payload()["revision"];
  auto idle_start = std::chrono::steady_clock::now();
  auto idle = api->get("/sessions/at-phase3/events?since=" + std::to_string(rev) + "&timeout_ms=100", "viewer-token");
  EXPECT_EQ(idle.status, 200);
  EXPECT_EQ(idle.payload()["revision"], rev);
  EXPECT_GE(std::chrono::steady_clock::now() - idle_start, 90ms);

  auto port = svc->port();
  auto waiter = std::async(std::launch::async, [port, rev] {
    Api poller(port);
    auto start = std::chrono::steady_clock::now();
    auto r = poller.get("/sessions/at-phase3/events?since=" + std::to_string(rev) + "&timeout_ms=5000",
                        "viewer-token");
    return std::make_pair(r, std::chrono::steady_clock::now() - start);
  });
  std::this_thread::sleep_for(100ms);
  ASSERT_EQ(api->post("/sessions/at-phase3/rounds", "mod-token").status, 200);
  auto [r, waited] = waiter.get();
  EXPECT_EQ(r.status, 200);
  EXPECT_GT(r.payload()["revision"].get<int>(), rev);
  EXPECT_EQ(r.payload()["state"], "round-active");
  EXPECT_LT(waited, 4s);
}

TEST_F(ServiceTest, SessionsSurviveRestart) {
  create_session("at/delphi/session.json");
  api->post("/sessions/at-phase3/rounds", "mod-token");
  api->post("/sessions/at-phase3/rounds/current/estimates", "e3-token", {{"quantity", "weight:o2"}, {"value", 0.25}});
  boot();
  auto view = api->get("/sessions/at-phase3", "e3-token");
  ASSERT_EQ(view.status, 200);
  EXPECT_EQ(view.payload()["state"], "round-active");
  EXPECT_EQ(view.payload()["own_estimates"]["weight:o2"]["value"], 0.25);
}

TEST_F(ServiceTest, SecondServiceOnTheStoreIsRefused) {
  try {
    service::Service other(test_config(dir.file("store")));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::conflict);
  }
}

TEST_F(ServiceTest, SessionsMustResolveTargetsAgainstTheRegister) {
  seed_at();
  json doc = read_json(at::fixture("at/delphi/session.json"));
  doc["session_id"] = "bad-targets";
  doc["quantities"].push_back("likelihood:r42");
  doc["org_id"] = "AT";
  auto r = api->post("/sessions", "mod-token", doc);
  EXPECT_EQ(r.status, 404);
  EXPECT_NE(r.body.dump().find("r42"), std::string::npos);
  doc["moderator"] = "someone-else";
  EXPECT_EQ(api->post("/sessions", "mod-token", doc).status, 403);
}

namespace {

void collect_numbers(const json& j, std::set<double>& out) {
  if (j.is_number()) {
    out.insert(j.get<double>());
  } else if (j.is_structured()) {
    for (const auto& v : j) collect_numbers(v, out);
  }
}

// Integers the service itself owns: counters, versions and round numbers.
const std::set<std::string> bookkeeping{"version", "round", "rounds", "revision", "max_rounds",
                                        "participant_count", "outstanding_participants", "sequence",
                                        "confirmed"};

void check_numbers(const json& j, const std::set<double>& produced, const std::string& path,
                   std::vector<std::string>& stray) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (bookkeeping.contains(k)) continue;
      check_numbers(v, produced, path + "." + k, stray);
    }
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) check_numbers(j[i], produced, path + "[" + std::to_string(i) + "]", stray);
  } else if (j.is_number() && !produced.contains(j.get<double>())) {
    stray.push_back(path + "=" + j.dump());
  }
}

}  // namespace

// Numbers in responses must come from module results or from the
// caller's own inputs; the service layer does no arithmetic of its own.
TEST(ServiceArithmetic, EveryNumberOriginatesInAModule) {
  TempDir dir;
  auto produced = std::make_shared<std::set<double>>();
  auto mu = std::make_shared<std::mutex>();
  auto record = [produced, mu](const json& j) {
    std::lock_guard lock(*mu);
    collect_numbers(j, *produced);
  };
  service::Gateway base;
  service::Gateway g;
  g.assess = [=](const auto& p, const auto& r, const auto& m, auto a) {
    auto s = base.assess(p, r, m, a);
    record(to_document(s));
    return s;
  };
  g.apply_plan = [=](const auto& s, auto m, auto c, auto plan) {
    auto out = base.apply_plan(s, std::move(m), std::move(c), std::move(plan));
    record(to_document(out));
    return out;
  };
  g.evaluate = [=](const auto& p, auto plan, auto mode) {
    auto e = base.evaluate(p, std::move(plan), mode);
    record(json(e));
    return e;
  };
  g.optimize = [=](const auto& p, auto o, auto mode) {
    auto e = base.optimize(p, o, mode);
    record(json(e.plan));
    record(json(e.evaluation));
    return e;
  };
  g.what_if = [=](const auto& p, const auto& e, const auto& id) {
    auto out = base.what_if(p, e, id);
    record(json(out));
    return out;
  };
  g.diff = [=](const auto& a, const auto& b) {
    auto m = base.diff(a, b);
    record(to_document(m));
    return m;
  };
  g.close_round = [=](auto& s, const auto& actor) {
    auto r = base.close_round(s, actor);
    record(json(r));
    return r;
  };
  g.finalize = [=](auto& s, const auto& actor, bool force) {
    auto r = base.finalize(s, actor, force);
    record(json(r));
    return r;
  };

  service::Service svc(test_config(dir.file("store")), g);
  Api api(svc.start());
  json profile_doc = read_json(at::fixture("at/profile.json"));
  json register_doc = read_json(at::fixture("at/risks.json"));
  json session_doc = read_json(at::fixture("at/delphi/session.json"));
  std::string impact_csv = read_text(at::fixture("at/impact.csv"));
  std::string reductions_csv = read_text(at::fixture("at/reductions.csv"));
  // Caller-supplied inputs may be echoed back verbatim.
  record(profile_doc);
  record(register_doc);
  record(session_doc);
  for (double v : {0.8, 0.9, 0.0}) produced->insert(v);
  ASSERT_EQ(api.post("/profiles", "mod-token", profile_doc).status, 200);
  ASSERT_EQ(api.post("/registers", "mod-token", register_doc).status, 200);

  std::vector<std::pair<std::string, json>> responses;
  cases::for_cases(200, [&](cases::Gen& gen, int) {
    std::optional<double> alpha;
    json body = {{"org_id", "AT"}, {"impact_csv", impact_csv}};
    if (gen.coin(0.3)) body["alpha_override"] = alpha.emplace(gen.integer(0, 20) * 0.05);
    if (alpha) produced->insert(*alpha);
    auto assessed = api.post("/assessments", "mod-token", body);
    ASSERT_EQ(assessed.status, 200);
    responses.emplace_back("assess", assessed.payload());
    std::string id = assessed.payload()["snapshot_id"];

    json plan = json::array();
    for (const char* c : {"c1", "c2", "c3"}) {
      if (gen.coin()) plan.push_back(c);
    }
    json tb = {{"snapshot_id", id}, {"reductions_csv", reductions_csv}, {"plan", plan},
               {"rounding", gen.coin() ? "full" : "paper-compat"}};
    if (gen.coin(0.5)) {
      json costs = json::object();
      for (const char* c : {"c1", "c2", "c3"}) {
        double v = gen.integer(0, 8) * 0.5;
        costs[c] = v;
        produced->insert(v);
      }
      tb["costs"] = costs;
    }
    switch (gen.integer(0, 3)) {
      case 0:
        responses.emplace_back("evaluate", api.post("/treatment/evaluate", "viewer-token", tb).payload());
        break;
      case 1:
        tb["mode"] = gen.coin() ? "exact" : "greedy";
        responses.emplace_back("optimize", api.post("/treatment/optimize", "viewer-token", tb).payload());
        break;
      case 2: {
        tb["toggle"] = std::string("c") + std::to_string(gen.integer(1, 3));
        responses.emplace_back("what-if", api.post("/treatment/what-if", "viewer-token", tb).payload());
        break;
      }
      default: {
        auto applied = api.post("/treatment/apply", "mod-token", tb).payload();
        responses.emplace_back("apply", applied);
        responses.emplace_back(
            "diff", api.get("/monitoring/diff?before=" + id + "&after=" + applied["snapshot_id"].get<std::string>(),
                            "viewer-token")
                        .payload());
      }
    }
  });

  api.post("/sessions", "mod-token", session_doc);
  api.post("/sessions/at-phase3/rounds", "mod-token");
  auto quantities = api.get("/sessions/at-phase3", "mod-token").payload()["quantities"];
  for (int i = 1; i <= 7; ++i) {
    json est = at_estimates(quantities);
    record(est);
    api.post("/sessions/at-phase3/rounds/current/estimates", token_of("e" + std::to_string(i)),
             {{"estimates", est}});
  }
  responses.emplace_back("close", api.post("/sessions/at-phase3/rounds/current/close", "mod-token").payload());
  responses.emplace_back("finalize", api.post("/sessions/at-phase3/finalize", "mod-token").payload());
  responses.emplace_back("view", api.get("/sessions/at-phase3", "mod-token").payload());

  for (const auto& [what, payload] : responses) {
    std::vector<std::string> stray;
    check_numbers(payload, *produced, what, stray);
    EXPECT_TRUE(stray.empty()) << what << ": " << stray.front();
  }
  EXPECT_GT(responses.size(), 200u);
}
