#pragma once

// Batch command line over the six lifecycle phases:
//
//   csrm delphi   finalize estimates from round tables
//   csrm assess   risk levels and tolerance classification
//   csrm treat    evaluate or optimize a countermeasure plan
//   csrm monitor  diff two snapshots
//   csrm serve    run the HTTP service
//
// run() is the whole program; tools/csrm.cpp only forwards argv.

#include <pthread.h>
#include <signal.h>

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csrm/csv.hpp"
#include "csrm/delphi.hpp"
#include "csrm/error.hpp"
#include "csrm/registry.hpp"
#include "csrm/report.hpp"
#include "csrm/rounding.hpp"
#include "csrm/service.hpp"
#include "csrm/store.hpp"
#include "csrm/treatment.hpp"

namespace csrm::cli {

inline constexpr const char* store_env = "CSRM_STORE";

enum Exit : int {
  ok = 0,
  usage = 1,  // bad flags, or an unexpected internal failure
  validation = 2,
  deadlock = 3,
  infeasible = 4,
  no_consensus = 5,
  storage = 6,
  conflict = 7,
};

inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::deadlocked: return deadlock;
    case ErrorCode::consensus_not_reached: return no_consensus;
    case ErrorCode::storage: return storage;
    case ErrorCode::conflict: return conflict;
    case ErrorCode::internal: return usage;
    default: return validation;
  }
}

inline constexpr const char* help_footer =
    "Environment:\n"
    "  CSRM_STORE   store directory; snapshots are recorded there and may be\n"
    "               referenced by id instead of by file path\n"
    "\n"
    "Exit status:\n"
    "  0 success            4 plan leaves a risk unacceptable\n"
    "  1 usage / internal   5 no consensus yet\n"
    "  2 invalid input      6 storage failure\n"
    "  3 Delphi deadlock    7 conflict (store locked, port busy, stale version)\n";

namespace detail {

inline std::string utc_now() { return service::utc_now(); }

struct Common {
  std::string mode = "full";
  std::string format = "text";
  std::string out;
  std::string store;
};

inline void add_common(CLI::App& cmd, Common& c) {
  cmd.add_option("--mode", c.mode, "Rounding of displayed values")
      ->check(CLI::IsMember({"full", "paper-compat"}))
      ->capture_default_str();
  cmd.add_option("--format", c.format, "Report rendering")
      ->check(CLI::IsMember({"text", "csv"}))
      ->capture_default_str();
  cmd.add_option("--out", c.out, "Write the report to this file instead of stdout");
  cmd.add_option("--store", c.store, "Store directory (overrides $CSRM_STORE)");
}

inline std::optional<Store> open_store(const Common& c) {
  std::string root = c.store;
  if (root.empty()) {
    if (const char* env = std::getenv(store_env)) root = env;
  }
  if (root.empty()) return std::nullopt;
  return std::optional<Store>(std::in_place, root);
}

inline void emit(const Common& c, const std::string& text, std::ostream& out) {
  if (c.out.empty()) {
    out << text;
  } else {
    write_text(c.out, text);
  }
}

inline std::string header_line(const std::string& command) {
  return "generated: " + utc_now() + " by csrm " + command;
}

/// A snapshot argument is a file path, or an id in the store.
inline AssessmentSnapshot resolve_snapshot(const std::string& ref, std::optional<Store>& store) {
  if (std::filesystem::exists(ref)) return load_snapshot(ref);
  if (store) return store->get_snapshot(ref);
  throw Error(ErrorCode::not_found, "no snapshot file " + ref + " and no store configured", {ref});
}

inline std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& row : csv::parse(s)) {
    for (const auto& cell : row.cells) {
      if (!cell.empty()) out.push_back(cell);
    }
  }
  return out;
}

}  // namespace detail

struct AssessArgs {
  detail::Common common;
  std::string profile, risks, matrix, estimates, snapshot_out;
  std::optional<double> alpha;
};

inline int cmd_assess(const AssessArgs& a, std::ostream& out, std::ostream& err) {
  auto mode = parse_rounding_mode(a.common.mode);
  auto profile = load_profile(a.profile);
  auto reg = load_register(a.risks);
  std::optional<ImpactMatrix> impact;
  if (!a.matrix.empty()) impact = import_impact_matrix(read_text(a.matrix), profile, reg);
  if (!a.estimates.empty()) {
    auto set = delphi::read_estimates(FieldReader(read_json(a.estimates), ""));
    auto inputs = apply_estimates(set, profile, reg, impact ? &*impact : nullptr);
    profile = std::move(inputs.profile);
    reg = std::move(inputs.risks);
    if (inputs.impact) impact = std::move(inputs.impact);
  }
  if (!impact) throw Error(ErrorCode::invalid_argument, "--matrix or --estimates with impacts is required");

  auto snap = assess(profile, reg, *impact, detail::utc_now(), a.alpha);
  auto store = detail::open_store(a.common);
  if (store) store->record_snapshot(snap);
  if (!a.snapshot_out.empty()) save_snapshot(a.snapshot_out, snap);

  report::ReportDocument doc{mode, {report::levels_table(snap, mode)}};
  doc.tables.back().notes.push_back("Snapshot: " + snap.snapshot_id);
  emit(a.common, report::render(doc, report::parse_format(a.common.format), detail::header_line("assess")), out);
  err << "snapshot " << snap.snapshot_id << "\n";
  return ok;
}

struct DelphiArgs {
  detail::Common common;
  std::string session;
  std::vector<std::string> rounds;
  std::string profile, risks, catalog, estimates_out, state_out;
  bool force = false;
};

inline report::Table round_table(const delphi::ConsensusReport& r, double theta, RoundingMode mode) {
  report::Table t;
  t.title = "Delphi round " + std::to_string(r.round);
  t.header = {"quantity", "median", "min", "max", "agreement", "consensus"};
  int reached = 0;
  for (const auto& q : r.quantities) {
    t.rows.push_back({q.quantity, format_value(q.median, mode), format_value(q.min, mode),
                      format_value(q.max, mode), format_value(q.ratio, mode), q.reached ? "yes" : "no"});
    reached += q.reached ? 1 : 0;
  }
  t.notes.push_back("Consensus on " + std::to_string(reached) + " of " +
                    std::to_string(r.quantities.size()) + " quantities (threshold " +
                    format_full(theta) + ")");
  return t;
}

inline int cmd_delphi(const DelphiArgs& a, std::ostream& out, std::ostream& err) {
  auto mode = parse_rounding_mode(a.common.mode);
  auto config = session_from_document(read_json(a.session));
  if (!a.profile.empty() && !a.risks.empty()) {
    auto profile = load_profile(a.profile);
    auto reg = load_register(a.risks);
    std::vector<std::string> cms;
    if (!a.catalog.empty()) {
      for (const auto& r : load_catalog(a.catalog).records) cms.push_back(r.id);
    }
    delphi::require_targets_resolve(config, profile.objectives, reg.risks, cms);
  }
  delphi::Session session(config);
  const std::string& mod = config.moderator;

  report::ReportDocument doc{mode, {}};
  auto save_state = [&] {
    if (!a.state_out.empty()) write_json(a.state_out, delphi::state_json(session.data()));
  };
  auto finish = [&](int code) {
    save_state();
    emit(a.common, report::render(doc, report::parse_format(a.common.format), detail::header_line("delphi")), out);
    return code;
  };

  for (const auto& path : a.rounds) {
    if (session.state() != delphi::SessionState::open) break;
    session.open_round(mod);
    std::string text = read_text(path);
    ingest_round_table(session, text);
    // A row in the round table affirms every value it carries forward.
    auto rows = csv::parse(text);
    for (std::size_t i = 1; i < rows.size(); ++i) session.confirm_all(rows[i].cells.front());
    try {
      auto r = session.close_round(mod);
      doc.tables.push_back(round_table(r, config.theta, mode));
      if (r.overall_reached) break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::incomplete_round) throw;
      std::string who;
      std::set<std::string> seen;
      for (const auto& m : session.missing_cells()) {
        if (seen.insert(m.participant).second) who += (who.empty() ? "" : ", ") + m.participant;
      }
      throw Error(ErrorCode::incomplete_round,
                  path + ": round " + std::to_string(session.round_number()) +
                      " incomplete, no estimates from " + who,
                  e.details());
    }
  }

  bool deadlocked = session.state() == delphi::SessionState::deadlocked;
  auto last = session.latest_report();
  if (!last) throw Error(ErrorCode::empty_input, "no round tables given");
  if (!last->overall_reached && !deadlocked) {
    err << "consensus not reached after " << last->round << " round(s); supply another round\n";
    return finish(no_consensus);
  }
  if (deadlocked && !a.force) {
    err << "session deadlocked at the round cap (" << config.max_rounds
        << "); rerun with --force to finalize from the last medians\n";
    return finish(deadlock);
  }
  auto set = session.finalize(mod, deadlocked);
  report::Table t;
  t.title = "Final estimates";
  t.header = {"quantity", "value"};
  for (const auto& v : set.values) t.rows.push_back({v.quantity, format_value(v.value, mode)});
  t.notes.push_back("Rounds: " + std::to_string(set.rounds) + (set.forced ? " (forced after deadlock)" : ""));
  doc.tables.push_back(std::move(t));
  if (!a.estimates_out.empty()) write_json(a.estimates_out, json(set));
  return finish(ok);
}

struct TreatArgs {
  detail::Common common;
  std::string snapshot, catalog, reductions, plan, optimize, snapshot_out;
};

inline int cmd_treat(const TreatArgs& a, std::ostream& out, std::ostream& err) {
  auto mode = parse_rounding_mode(a.common.mode);
  auto store = detail::open_store(a.common);
  auto base = detail::resolve_snapshot(a.snapshot, store);
  if (base.plan) throw Error(ErrorCode::invalid_argument, "snapshot " + base.snapshot_id + " already has a plan applied");
  std::optional<CountermeasureCatalog> catalog;
  if (!a.catalog.empty()) catalog = load_catalog(a.catalog);
  RiskRegister reg{base.org_id, 0, base.risks};
  auto reductions = import_reduction_matrix(read_text(a.reductions), reg, catalog ? &*catalog : nullptr);
  std::map<std::string, double> costs;
  if (catalog) costs = catalog->costs();

  std::vector<std::string> plan;
  std::string selected_by;
  if (!a.optimize.empty()) {
    OptimizeOptions opts;
    opts.mode = parse_optimize_mode(a.optimize);
    auto best = optimize_plan(base.treatment_problem(reductions, costs), opts, mode);
    plan = best.plan.countermeasures;
    selected_by = "Selected by " + a.optimize + " optimizer";
  } else {
    plan = detail::split_ids(a.plan);
  }

  // Display rounding never enters the persisted record.
  auto treated = apply_plan(base, std::move(reductions), std::move(costs), plan, detail::utc_now());
  if (store) store->record_snapshot(treated);
  if (!a.snapshot_out.empty()) save_snapshot(a.snapshot_out, treated);

  const AppliedPlan& applied = *treated.plan;
  report::ReportDocument doc{mode,
                             {report::reduction_table(applied, mode),
                              report::before_after_table(applied.evaluation, mode)}};
  if (!selected_by.empty()) doc.tables.back().notes.push_back(selected_by);
  doc.tables.back().notes.push_back("Snapshot: " + treated.snapshot_id);
  emit(a.common, report::render(doc, report::parse_format(a.common.format), detail::header_line("treat")), out);
  err << "snapshot " << treated.snapshot_id << "\n";
  return applied.evaluation.feasible ? ok : infeasible;
}

struct MonitorArgs {
  detail::Common common;
  std::string before, after;
};

inline int cmd_monitor(const MonitorArgs& a, std::ostream& out, std::ostream&) {
  auto mode = parse_rounding_mode(a.common.mode);
  auto store = detail::open_store(a.common);
  auto before = detail::resolve_snapshot(a.before, store);
  auto after = detail::resolve_snapshot(a.after, store);
  if (!verify_snapshot(before) || !verify_snapshot(after)) {
    throw Error(ErrorCode::schema, "snapshot outputs do not match their inputs");
  }
  auto m = diff_snapshots(before, after);
  report::ReportDocument doc{mode, {report::monitoring_table(m, mode)}};
  emit(a.common, report::render(doc, report::parse_format(a.common.format), detail::header_line("monitor")), out);
  return ok;
}

struct ServeArgs {
  std::string config, store, bind;
  int port = -1;
};

inline int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream&) {
  auto cfg = service::config_from_document(read_json(a.config));
  if (!a.store.empty()) {
    cfg.store = a.store;
  } else if (const char* env = std::getenv(store_env)) {
    cfg.store = env;
  }
  if (!a.bind.empty()) cfg.bind = a.bind;
  if (a.port >= 0) cfg.port = a.port;

  // Worker threads inherit the mask, so only sigwait sees these.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::Service svc(cfg);
  int port = svc.start();
  out << "listening on http://" << cfg.bind << ":" << port << service::api_base << "\n" << std::flush;
  int sig = 0;
  sigwait(&set, &sig);
  svc.stop();
  out << "stopped\n";
  return ok;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Quantitative security risk management"};
  app.footer(help_footer);
  app.require_subcommand(1);

  AssessArgs assess_args;
  auto* assess_cmd = app.add_subcommand("assess", "Evaluate risk levels and classify against the tolerance");
  assess_cmd->add_option("--profile", assess_args.profile, "Organization profile (JSON)")->required();
  assess_cmd->add_option("--risks", assess_args.risks, "Risk register (JSON)")->required();
  assess_cmd->add_option("--matrix", assess_args.matrix, "Impact table (CSV: risk,<objective ids>)");
  assess_cmd->add_option("--estimates", assess_args.estimates, "Finalized Delphi estimates to overlay (JSON)");
  assess_cmd->add_option("--alpha-override", assess_args.alpha, "Tolerance replacing the profile's")
      ->check(CLI::Range(0.0, 1.0));
  assess_cmd->add_option("--snapshot-out", assess_args.snapshot_out, "Write the snapshot to this file");
  detail::add_common(*assess_cmd, assess_args.common);

  DelphiArgs delphi_args;
  auto* delphi_cmd = app.add_subcommand("delphi", "Replay Delphi rounds from tables and finalize estimates");
  delphi_cmd->add_option("--session", delphi_args.session, "Session definition (JSON)")->required();
  delphi_cmd->add_option("--round", delphi_args.rounds,
                         "Round table (CSV: participant,<quantity keys>); repeat in round order")
      ->required();
  delphi_cmd->add_option("--profile", delphi_args.profile, "Profile to resolve objective targets");
  delphi_cmd->add_option("--risks", delphi_args.risks, "Register to resolve risk targets");
  delphi_cmd->add_option("--catalog", delphi_args.catalog, "Catalog to resolve countermeasure targets");
  delphi_cmd->add_option("--estimates-out", delphi_args.estimates_out, "Write the finalized estimates (JSON)");
  delphi_cmd->add_option("--state-out", delphi_args.state_out, "Write the session state and audit trail (JSON)");
  delphi_cmd->add_flag("--force", delphi_args.force, "Finalize a deadlocked session from its last medians");
  detail::add_common(*delphi_cmd, delphi_args.common);

  TreatArgs treat_args;
  auto* treat_cmd = app.add_subcommand("treat", "Evaluate or optimize a countermeasure plan");
  treat_cmd->add_option("--snapshot", treat_args.snapshot, "Assessment snapshot (file or store id)")->required();
  treat_cmd->add_option("--catalog", treat_args.catalog, "Countermeasure catalog with costs (JSON)");
  treat_cmd->add_option("--reductions", treat_args.reductions,
                        "Reduction table (CSV: countermeasure,<risk ids>)")
      ->required();
  auto* plan_opt = treat_cmd->add_option("--plan", treat_args.plan, "Comma-separated countermeasure ids");
  auto* opt_opt = treat_cmd->add_option("--optimize", treat_args.optimize, "Select the plan automatically")
                      ->check(CLI::IsMember({"exact", "greedy"}));
  plan_opt->excludes(opt_opt);
  treat_cmd->add_option("--snapshot-out", treat_args.snapshot_out, "Write the treated snapshot to this file");
  detail::add_common(*treat_cmd, treat_args.common);

  MonitorArgs monitor_args;
  auto* monitor_cmd = app.add_subcommand("monitor", "Compare two snapshots");
  monitor_cmd->add_option("--before", monitor_args.before, "Earlier snapshot (file or store id)")->required();
  monitor_cmd->add_option("--after", monitor_args.after, "Later snapshot (file or store id)")->required();
  detail::add_common(*monitor_cmd, monitor_args.common);

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service until SIGINT or SIGTERM");
  serve_cmd->add_option("--config", serve_args.config, "Service configuration (JSON)")->required();
  serve_cmd->add_option("--store", serve_args.store, "Store directory (overrides config and $CSRM_STORE)");
  serve_cmd->add_option("--bind", serve_args.bind, "Bind address");
  serve_cmd->add_option("--port", serve_args.port, "Port; 0 picks a free one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? ok : usage;
  }

  try {
    if (*assess_cmd) return cmd_assess(assess_args, out, err);
    if (*delphi_cmd) return cmd_delphi(delphi_args, out, err);
    if (*treat_cmd) {
      if (treat_args.plan.empty() && treat_args.optimize.empty()) {
        err << "error: treat needs --plan or --optimize\n";
        return usage;
      }
      return cmd_treat(treat_args, out, err);
    }
    if (*monitor_cmd) return cmd_monitor(monitor_args, out, err);
    if (*serve_cmd) return cmd_serve(serve_args, out, err);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    for (const auto& d : e.details()) err << "  " << d << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error [internal]: " << e.what() << "\n";
    return usage;
  }
  return usage;
}

}  // namespace csrm::cli
