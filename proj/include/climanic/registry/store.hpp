#pragma once

// File persistence for the registry: registry.snapshot holds every group,
// registry.log holds one change per line since that snapshot. Both are
// canonical JSON text, so a restored registry serializes byte-identically.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "climanic/registry/registry.hpp"
#include "climanic/result.hpp"

namespace climanic {

/// Canonical snapshot text for a set of groups (sorted by group id).
std::string registry_snapshot_text(const std::vector<GroupRecord>& groups);

class RegistryStore {
 public:
  struct Options {
    /// Compact after this many log records (0 = only on demand).
    std::uint64_t snapshot_every = 1000;
    /// fsync after each log record; off by default, writes still reach the
    /// kernel before the mutation is acknowledged.
    bool fsync_each = false;
  };

  /// Restores `registry` from `dir` (snapshot, then log), rewrites a fresh
  /// snapshot and attaches itself as the registry's change listener.
  /// CorruptState when a complete record fails to parse.
  static Result<std::unique_ptr<RegistryStore>> open(const std::string& dir, Registry& registry, Options opts);
  static Result<std::unique_ptr<RegistryStore>> open(const std::string& dir, Registry& registry) {
    return open(dir, registry, Options{});
  }

  ~RegistryStore();
  RegistryStore(const RegistryStore&) = delete;
  RegistryStore& operator=(const RegistryStore&) = delete;

  /// Writes registry.snapshot atomically and truncates registry.log.
  Result<void> snapshot();

  std::uint64_t records_since_snapshot() const;
  std::string snapshot_path() const { return dir_ + "/registry.snapshot"; }
  std::string log_path() const { return dir_ + "/registry.log"; }

 private:
  RegistryStore(std::string dir, Options opts) : dir_(std::move(dir)), opts_(opts) {}

  void record(const RegistryChange& c);
  Result<void> snapshot_locked();
  Result<void> open_log_locked(bool truncate);

  std::string dir_;
  Options opts_;
  mutable std::mutex mu_;
  int log_fd_ = -1;
  std::uint64_t since_snapshot_ = 0;
  /// Mirror of the registry, keyed by group id hex, so snapshots never
  /// need the registry's locks.
  std::map<std::string, GroupRecord> mirror_;
};

}  // namespace climanic
