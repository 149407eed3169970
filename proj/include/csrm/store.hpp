#pragma once

// Directory-backed document store. One JSON file per document:
//
//   <root>/profiles/<org>.json
//   <root>/registers/<org>.json
//   <root>/sessions/<session>.json
//   <root>/snapshots/<snapshot>.json
//   <root>/store.lock            held by a running service
//
// Profiles and registers carry a version counter; a put with a stale
// expected version is rejected as a lost update. Snapshots are write-once.

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "csrm/delphi.hpp"
#include "csrm/error.hpp"
#include "csrm/json_io.hpp"
#include "csrm/registry.hpp"

namespace csrm {

namespace fs = std::filesystem;

/// Exclusive ownership of a store by one process. The lock file records
/// the owner pid and a generation counter bumped on every acquisition; a
/// lock whose owner is no longer alive is taken over.
class StoreLock {
 public:
  explicit StoreLock(const fs::path& root) : path_(root / "store.lock") {
    for (int attempt = 0; attempt < 2; ++attempt) {
      int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
      if (fd >= 0) {
        generation_ = previous_generation_ + 1;
        std::string body = json{{"pid", static_cast<long>(::getpid())},
                                {"generation", generation_}}.dump();
        bool ok = ::write(fd, body.data(), body.size()) == static_cast<ssize_t>(body.size());
        ::close(fd);
        if (!ok) throw Error(ErrorCode::storage, "cannot write " + path_.string());
        return;
      }
      if (errno != EEXIST) {
        throw Error(ErrorCode::storage, "store not writable: " + path_.string(), {path_.string()});
      }
      long owner = 0;
      try {
        json held = json::parse(read_text(path_.string()));
        owner = held.value("pid", 0L);
        previous_generation_ = held.value("generation", std::int64_t{0});
      } catch (const std::exception&) {
        owner = 0;
      }
      if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) {
        throw Error(ErrorCode::conflict,
                    "store " + path_.parent_path().string() + " is in use by process " +
                        std::to_string(owner) + " (generation " +
                        std::to_string(previous_generation_) + ")");
      }
      std::error_code ec;
      fs::remove(path_, ec);  // stale
    }
    throw Error(ErrorCode::conflict, "could not acquire " + path_.string());
  }

  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

  ~StoreLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

  std::int64_t generation() const noexcept { return generation_; }

 private:
  fs::path path_;
  std::int64_t previous_generation_ = 0;
  std::int64_t generation_ = 0;
};

class Store {
 public:
  explicit Store(fs::path root) : root_(std::move(root)) {
    for (const char* sub : {"profiles", "registers", "sessions", "snapshots"}) {
      std::error_code ec;
      fs::create_directories(root_ / sub, ec);
      if (ec) {
        throw Error(ErrorCode::storage,
                    "cannot create store directory " + (root_ / sub).string() + ": " + ec.message(),
                    {root_.string()});
      }
    }
    probe_writable();
  }

  const fs::path& root() const noexcept { return root_; }

  // Profiles ---------------------------------------------------------------

  /// Stores `p`. With `expected_version`, the current stored version must
  /// match (0 = must not exist yet). Returns the stored document.
  OrganizationProfile put_profile(OrganizationProfile p,
                                  std::optional<std::int64_t> expected_version = std::nullopt) {
    check_slug(p.org_id);
    auto lock = lock_key("profiles/" + p.org_id);
    auto current = find_profile(p.org_id);
    p.version = next_version(current ? current->version : 0, expected_version, p.org_id);
    require_valid_weights(p.objectives);
    write_json(file("profiles", p.org_id), to_document(p));
    return p;
  }

  std::optional<OrganizationProfile> find_profile(const std::string& org) const {
    auto path = file("profiles", org);
    if (!fs::exists(path)) return std::nullopt;
    return profile_from_document(read_json(path.string()));
  }

  OrganizationProfile get_profile(const std::string& org) const {
    check_slug(org);
    auto p = find_profile(org);
    if (!p) throw Error(ErrorCode::not_found, "no profile for " + org, {org});
    return *p;
  }

  void delete_profile(const std::string& org) { remove("profiles", org); }
  std::vector<std::string> list_profiles() const { return list("profiles"); }

  // Registers --------------------------------------------------------------

  RiskRegister put_register(RiskRegister r,
                            std::optional<std::int64_t> expected_version = std::nullopt) {
    check_slug(r.org_id);
    auto lock = lock_key("registers/" + r.org_id);
    auto current = find_register(r.org_id);
    r.version = next_version(current ? current->version : 0, expected_version, r.org_id);
    write_json(file("registers", r.org_id), to_document(r));
    return r;
  }

  std::optional<RiskRegister> find_register(const std::string& org) const {
    auto path = file("registers", org);
    if (!fs::exists(path)) return std::nullopt;
    return register_from_document(read_json(path.string()));
  }

  RiskRegister get_register(const std::string& org) const {
    check_slug(org);
    auto r = find_register(org);
    if (!r) throw Error(ErrorCode::not_found, "no risk register for " + org, {org});
    return *r;
  }

  void delete_register(const std::string& org) { remove("registers", org); }
  std::vector<std::string> list_registers() const { return list("registers"); }

  // Snapshots --------------------------------------------------------------

  /// Write-once. Re-recording the same content (timestamps aside) is a
  /// no-op; any other content under an existing id is rejected.
  std::string record_snapshot(const AssessmentSnapshot& s) {
    check_slug(s.snapshot_id);
    auto lock = lock_key("snapshots/" + s.snapshot_id);
    auto path = file("snapshots", s.snapshot_id);
    if (fs::exists(path)) {
      auto existing = snapshot_from_document(read_json(path.string()));
      if (detail::snapshot_body(existing) == detail::snapshot_body(s)) return s.snapshot_id;
      throw Error(ErrorCode::conflict, "snapshot " + s.snapshot_id + " is immutable",
                  {s.snapshot_id});
    }
    write_json(path, to_document(s));
    return s.snapshot_id;
  }

  AssessmentSnapshot get_snapshot(const std::string& id) const {
    check_slug(id);
    auto path = file("snapshots", id);
    if (!fs::exists(path)) throw Error(ErrorCode::not_found, "no snapshot " + id, {id});
    return snapshot_from_document(read_json(path.string()));
  }

  std::vector<std::string> list_snapshots() const { return list("snapshots"); }

  // Sessions ---------------------------------------------------------------

  void put_session(const delphi::SessionData& d) {
    check_slug(d.config.session_id);
    auto lock = lock_key("sessions/" + d.config.session_id);
    write_json(file("sessions", d.config.session_id), delphi::state_json(d));
  }

  std::optional<delphi::SessionData> find_session(const std::string& id) const {
    auto path = file("sessions", id);
    if (!fs::exists(path)) return std::nullopt;
    return delphi::read_state(read_json(path.string()));
  }

  std::vector<std::string> list_sessions() const { return list("sessions"); }

 private:
  static void check_slug(const std::string& id) {
    bool ok = !id.empty() && id.size() <= 128 && id != "." && id != "..";
    for (char c : id) {
      ok = ok && (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.');
    }
    if (!ok) throw Error(ErrorCode::invalid_argument, "invalid id '" + id + "'", {id});
  }

  static std::int64_t next_version(std::int64_t current, std::optional<std::int64_t> expected,
                                   const std::string& key) {
    if (expected && *expected != current) {
      throw Error(ErrorCode::conflict,
                  key + " is at version " + std::to_string(current) + ", expected " +
                      std::to_string(*expected),
                  {key});
    }
    return current + 1;
  }

  fs::path file(const char* kind, const std::string& id) const {
    return root_ / kind / (id + ".json");
  }

  void remove(const char* kind, const std::string& id) {
    check_slug(id);
    auto lock = lock_key(std::string(kind) + "/" + id);
    std::error_code ec;
    if (!fs::remove(file(kind, id), ec)) {
      throw Error(ErrorCode::not_found, std::string(kind) + " " + id + " not found", {id});
    }
  }

  std::vector<std::string> list(const char* kind) const {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(root_ / kind)) {
      if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  void probe_writable() const {
    auto probe = root_ / ".write-probe";
    std::ofstream out(probe);
    if (!out) throw Error(ErrorCode::storage, "store not writable: " + root_.string(), {root_.string()});
    out.close();
    std::error_code ec;
    fs::remove(probe, ec);
  }

  std::unique_lock<std::mutex> lock_key(const std::string& key) {
    std::mutex* m = nullptr;
    {
      std::lock_guard guard(keys_mu_);
      auto& slot = key_locks_[key];
      if (!slot) slot = std::make_unique<std::mutex>();
      m = slot.get();
    }
    return std::unique_lock<std::mutex>(*m);
  }

  fs::path root_;
  std::mutex keys_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> key_locks_;
};

}  // namespace csrm
