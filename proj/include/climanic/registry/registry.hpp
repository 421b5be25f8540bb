#pragma once

// The group directory: courses, groups, members with addresses and join
// order, the active flag, and the current controller. Leader changes are
// decided here by compare-and-set on the controller epoch.
//
// Thread-safe. Mutations to one group are serialized by that group's mutex;
// different groups proceed independently.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/log/event.hpp"
#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic {

struct MemberEntry {
  ParticipantId participant;
  std::string address;
  JoinSeq join_seq;
  friend bool operator==(const MemberEntry&, const MemberEntry&) = default;
};

struct GroupRecord {
  GroupId group_id;
  std::string course_id;
  bool active = true;
  /// Sorted by join_seq.
  std::vector<MemberEntry> members;
  ParticipantId controller;
  ControlEpoch controller_epoch;
  Millis created_at = 0;
  /// Next JoinSeq to hand out; join order numbers are never reused.
  std::uint64_t next_join_seq = 0;

  const MemberEntry* find(const ParticipantId& p) const;
  friend bool operator==(const GroupRecord&, const GroupRecord&) = default;
};

void to_json(nlohmann::json& j, const MemberEntry& m);
void from_json(const nlohmann::json& j, MemberEntry& m);
void to_json(nlohmann::json& j, const GroupRecord& g);
void from_json(const nlohmann::json& j, GroupRecord& g);

struct GroupSummary {
  GroupId group_id;
  std::size_t member_count = 0;
  ParticipantId controller;
  Millis created_at = 0;
};

struct JoinResult {
  JoinSeq join_seq;
  MemberEntry leader;
  ControlEpoch epoch;
  Millis created_at = 0;
};

/// get_members answer. Carries the controller and epoch alongside the
/// roster so a peer re-deciding failover sees both in one consistent read.
struct MembersView {
  std::vector<MemberEntry> members;
  ParticipantId controller;
  ControlEpoch controller_epoch;
  bool active = true;
};

/// Optional guard on leave_group used when one peer removes another (a
/// leader evicting a silent follower, a new leader removing its crashed
/// predecessor). Applies only if `by` still controls the group at
/// `expected_epoch`, so a deposed leader cannot evict anyone.
struct LeaveFence {
  ParticipantId by;
  ControlEpoch expected_epoch;
};

/// Persisted change, one per successful mutation. `record` is the full new
/// group row; absent when the group was deleted.
struct RegistryChange {
  GroupId group_id;
  std::optional<GroupRecord> record;
};

class CourseCatalog {
 public:
  CourseCatalog() = default;
  explicit CourseCatalog(std::set<std::string> courses) : courses_(std::move(courses)) {}

  /// {"courses": [{"course_id": "...", "title": "..."}, ...]}
  static Result<CourseCatalog> from_json(const nlohmann::json& j);
  static Result<CourseCatalog> load(const std::string& path);

  bool contains(const std::string& course_id) const { return courses_.count(course_id) != 0; }
  const std::set<std::string>& courses() const noexcept { return courses_; }

 private:
  std::set<std::string> courses_;
};

class Registry {
 public:
  using Clock = std::function<Millis()>;
  using ChangeListener = std::function<void(const RegistryChange&)>;

  Registry(CourseCatalog catalog, Clock clock, std::uint64_t seed);

  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  /// Called with the group's lock held, so per-group order is preserved.
  void set_change_listener(ChangeListener l) { on_change_ = std::move(l); }
  void set_log_sink(LogSink s) { on_log_ = std::move(s); }

  Result<GroupRecord> create_group(const std::string& course_id, const ParticipantId& creator,
                                   const std::string& address);
  Result<std::vector<GroupSummary>> list_active_groups(const std::string& course_id) const;
  Result<JoinResult> join_group(const GroupId& g, const ParticipantId& p, const std::string& address);
  Result<std::size_t> leave_group(const GroupId& g, const ParticipantId& p,
                                  const std::optional<LeaveFence>& fence = std::nullopt);
  Result<GroupRecord> set_active(const GroupId& g, bool active, const ParticipantId& by);
  Result<ControlEpoch> claim_leadership(const GroupId& g, const ParticipantId& claimant, ControlEpoch expected);
  Result<MembersView> get_members(const GroupId& g) const;
  Result<GroupRecord> get_group(const GroupId& g) const;

  /// Every group, sorted by group id.
  std::vector<GroupRecord> all_groups() const;

  /// Replaces all state (restore path). Not for use while serving.
  void load(std::vector<GroupRecord> groups);
  /// Applies one persisted change (log replay).
  void apply(const RegistryChange& c);

  /// Number of successful mutations; the harness audits log completeness
  /// against it.
  std::uint64_t mutation_count() const noexcept { return mutations_.load(); }

 private:
  struct Slot {
    mutable std::mutex mu;
    GroupRecord rec;
    bool deleted = false;
  };

  std::shared_ptr<Slot> find_slot(const GroupId& g) const;
  void committed(Slot& slot, LogKind kind, const ParticipantId& actor, nlohmann::json detail);
  void erase_slot(const GroupId& g);
  void index_add(const std::string& address, const GroupId& g);
  void index_remove(const std::string& address, const GroupId& g);

  CourseCatalog catalog_;
  Clock clock_;
  ChangeListener on_change_;
  LogSink on_log_;

  mutable std::shared_mutex map_mu_;
  std::unordered_map<GroupId, std::shared_ptr<Slot>> groups_;

  std::mutex rng_mu_;
  std::mt19937_64 rng_;

  mutable std::mutex index_mu_;
  std::unordered_multimap<std::string, GroupId> by_address_;

  std::atomic<std::uint64_t> mutations_{0};
};

}  // namespace climanic
