#include "climanic/registry/registry.hpp"

#include <algorithm>
#include <fstream>

#include "climanic/codec.hpp"

namespace climanic {

using nlohmann::json;

const MemberEntry* GroupRecord::find(const ParticipantId& p) const {
  for (const auto& m : members) {
    if (m.participant == p) return &m;
  }
  return nullptr;
}

void to_json(json& j, const MemberEntry& m) {
  j = json{{"participant", m.participant}, {"address", m.address}, {"join_seq", m.join_seq}};
}

void from_json(const json& j, MemberEntry& m) {
  m.participant = j.at("participant").get<ParticipantId>();
  m.address = j.at("address").get<std::string>();
  m.join_seq = j.at("join_seq").get<JoinSeq>();
}

void to_json(json& j, const GroupRecord& g) {
  j = json{{"group_id", g.group_id},
           {"course_id", g.course_id},
           {"active", g.active},
           {"members", g.members},
           {"controller", g.controller},
           {"controller_epoch", g.controller_epoch},
           {"created_at", g.created_at},
           {"next_join_seq", g.next_join_seq}};
}

void from_json(const json& j, GroupRecord& g) {
  g.group_id = j.at("group_id").get<GroupId>();
  g.course_id = j.at("course_id").get<std::string>();
  g.active = j.at("active").get<bool>();
  g.members = j.at("members").get<std::vector<MemberEntry>>();
  g.controller = j.at("controller").get<ParticipantId>();
  g.controller_epoch = j.at("controller_epoch").get<ControlEpoch>();
  g.created_at = j.at("created_at").get<Millis>();
  g.next_join_seq = j.at("next_join_seq").get<std::uint64_t>();
}

Result<CourseCatalog> CourseCatalog::from_json(const json& j) {
  std::set<std::string> courses;
  try {
    for (const auto& c : j.at("courses")) {
      auto id = c.at("course_id").get<std::string>();
      if (id.empty()) return make_error(Errc::invalid_argument, "course_id is empty");
      courses.insert(std::move(id));
    }
  } catch (const std::exception& e) {
    return make_error(Errc::invalid_argument, std::string("courses file: ") + e.what());
  }
  return CourseCatalog(std::move(courses));
}

Result<CourseCatalog> CourseCatalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::io_error, "cannot open courses file " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return make_error(Errc::invalid_argument, "courses file is not JSON: " + path);
  return from_json(j);
}

Registry::Registry(CourseCatalog catalog, Clock clock, std::uint64_t seed)
    : catalog_(std::move(catalog)), clock_(std::move(clock)), rng_(seed) {}

std::shared_ptr<Registry::Slot> Registry::find_slot(const GroupId& g) const {
  std::shared_lock lock(map_mu_);
  auto it = groups_.find(g);
  return it == groups_.end() ? nullptr : it->second;
}

void Registry::erase_slot(const GroupId& g) {
  std::unique_lock lock(map_mu_);
  groups_.erase(g);
}

void Registry::index_add(const std::string& address, const GroupId& g) {
  std::lock_guard lock(index_mu_);
  by_address_.emplace(address, g);
}

void Registry::index_remove(const std::string& address, const GroupId& g) {
  std::lock_guard lock(index_mu_);
  auto [lo, hi] = by_address_.equal_range(address);
  for (auto it = lo; it != hi; ++it) {
    if (it->second == g) {
      by_address_.erase(it);
      return;
    }
  }
}

void Registry::committed(Slot& slot, LogKind kind, const ParticipantId& actor, json detail) {
  mutations_.fetch_add(1);
  if (on_change_) {
    RegistryChange c{slot.rec.group_id, std::nullopt};
    if (!slot.deleted) c.record = slot.rec;
    on_change_(c);
  }
  if (on_log_) {
    LogEvent ev;
    ev.at = clock_();
    ev.group_id = slot.rec.group_id;
    ev.actor = actor;
    ev.kind = kind;
    ev.epoch = slot.rec.controller_epoch;
    ev.detail = std::move(detail);
    on_log_(std::move(ev));
  }
}

Result<GroupRecord> Registry::create_group(const std::string& course_id, const ParticipantId& creator,
                                           const std::string& address) {
  if (!catalog_.contains(course_id)) return make_error(Errc::unknown_course, course_id);
  if (!is_valid_endpoint(address)) return make_error(Errc::invalid_argument, "bad address " + address);

  std::vector<GroupId> holders;
  {
    std::lock_guard lock(index_mu_);
    auto [lo, hi] = by_address_.equal_range(address);
    for (auto it = lo; it != hi; ++it) holders.push_back(it->second);
  }
  for (const auto& g : holders) {
    auto other = find_slot(g);
    if (!other) continue;
    std::lock_guard lock(other->mu);
    if (!other->deleted && other->rec.active) {
      return make_error(Errc::duplicate_address, address + " is already in group " + g.hex());
    }
  }

  auto slot = std::make_shared<Slot>();
  std::lock_guard slot_lock(slot->mu);
  {
    std::unique_lock map_lock(map_mu_);
    GroupId id;
    {
      std::lock_guard rng_lock(rng_mu_);
      do {
        id = GroupId::random(rng_);
      } while (groups_.count(id) != 0);
    }
    slot->rec.group_id = id;
    groups_.emplace(id, slot);
  }
  auto& rec = slot->rec;
  rec.course_id = course_id;
  rec.active = true;
  rec.members = {MemberEntry{creator, address, JoinSeq{0}}};
  rec.controller = creator;
  rec.controller_epoch = ControlEpoch{0};
  rec.created_at = clock_();
  rec.next_join_seq = 1;
  index_add(address, rec.group_id);
  committed(*slot, LogKind::join, creator,
            json{{"op", "create"}, {"course_id", course_id}, {"join_seq", 0}, {"address", address}});
  return rec;
}

Result<std::vector<GroupSummary>> Registry::list_active_groups(const std::string& course_id) const {
  if (!catalog_.contains(course_id)) return make_error(Errc::unknown_course, course_id);
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::shared_lock lock(map_mu_);
    for (const auto& [id, slot] : groups_) slots.push_back(slot);
  }
  std::vector<GroupSummary> out;
  for (const auto& slot : slots) {
    std::lock_guard lock(slot->mu);
    const auto& r = slot->rec;
    if (slot->deleted || !r.active || r.course_id != course_id) continue;
    out.push_back(GroupSummary{r.group_id, r.members.size(), r.controller, r.created_at});
  }
  std::sort(out.begin(), out.end(), [](const GroupSummary& a, const GroupSummary& b) {
    return std::tie(a.created_at, a.group_id) < std::tie(b.created_at, b.group_id);
  });
  return out;
}

Result<JoinResult> Registry::join_group(const GroupId& g, const ParticipantId& p, const std::string& address) {
  if (!is_valid_endpoint(address)) return make_error(Errc::invalid_argument, "bad address " + address);
  auto slot = find_slot(g);
  if (!slot) return make_error(Errc::unknown_group, g.hex());
  std::lock_guard lock(slot->mu);
  if (slot->deleted) return make_error(Errc::unknown_group, g.hex());
  auto& rec = slot->rec;
  if (!rec.active) return make_error(Errc::group_inactive, g.hex());
  if (rec.find(p)) return make_error(Errc::duplicate_participant, p.str());
  const MemberEntry* leader = rec.find(rec.controller);
  // The controller left without a successor being recorded yet; the joiner
  // would have nobody to connect to.
  if (!leader) return make_error(Errc::leader_unreachable, "no controller is registered for " + g.hex());
  const MemberEntry leader_copy = *leader;

  JoinSeq seq{rec.next_join_seq++};
  rec.members.push_back(MemberEntry{p, address, seq});
  index_add(address, g);
  committed(*slot, LogKind::join, p, json{{"op", "join"}, {"join_seq", seq}, {"address", address}});
  return JoinResult{seq, leader_copy, rec.controller_epoch, rec.created_at};
}

Result<std::size_t> Registry::leave_group(const GroupId& g, const ParticipantId& p,
                                          const std::optional<LeaveFence>& fence) {
  auto slot = find_slot(g);
  if (!slot) return make_error(Errc::unknown_group, g.hex());
  std::unique_lock lock(slot->mu);
  if (slot->deleted) return make_error(Errc::unknown_group, g.hex());
  auto& rec = slot->rec;
  if (fence) {
    if (rec.controller != fence->by) return make_error(Errc::not_controller, fence->by.str());
    if (rec.controller_epoch != fence->expected_epoch) {
      return make_error(Errc::epoch_conflict, "registry epoch is " + std::to_string(rec.controller_epoch.value));
    }
  }
  auto it = std::find_if(rec.members.begin(), rec.members.end(),
                         [&](const MemberEntry& m) { return m.participant == p; });
  if (it == rec.members.end()) return make_error(Errc::not_a_member, p.str());
  const std::string address = it->address;
  rec.members.erase(it);
  index_remove(address, g);
  const std::size_t remaining = rec.members.size();
  const ParticipantId actor = fence ? fence->by : p;
  json detail{{"participant", p}, {"remaining", remaining}};
  if (remaining == 0) {
    slot->deleted = true;
    detail["deleted"] = true;
    committed(*slot, LogKind::leave, actor, std::move(detail));
    lock.unlock();
    erase_slot(g);
    return remaining;
  }
  committed(*slot, LogKind::leave, actor, std::move(detail));
  return remaining;
}

Result<GroupRecord> Registry::set_active(const GroupId& g, bool active, const ParticipantId& by) {
  auto slot = find_slot(g);
  if (!slot) return make_error(Errc::unknown_group, g.hex());
  std::lock_guard lock(slot->mu);
  if (slot->deleted) return make_error(Errc::unknown_group, g.hex());
  auto& rec = slot->rec;
  if (rec.controller != by || !rec.find(by)) return make_error(Errc::not_controller, by.str());
  rec.active = active;
  committed(*slot, LogKind::active_toggle, by, json{{"active", active}});
  return rec;
}

Result<ControlEpoch> Registry::claim_leadership(const GroupId& g, const ParticipantId& claimant,
                                                ControlEpoch expected) {
  auto slot = find_slot(g);
  if (!slot) return make_error(Errc::unknown_group, g.hex());
  std::lock_guard lock(slot->mu);
  if (slot->deleted) return make_error(Errc::unknown_group, g.hex());
  auto& rec = slot->rec;
  if (!rec.find(claimant)) return make_error(Errc::not_a_member, claimant.str());
  if (rec.controller_epoch != expected) {
    return make_error(Errc::epoch_conflict, "registry epoch is " + std::to_string(rec.controller_epoch.value));
  }
  const ParticipantId previous = rec.controller;
  rec.controller = claimant;
  rec.controller_epoch = expected.next();
  committed(*slot, LogKind::control_transfer, claimant, json{{"op", "claim"}, {"previous", previous}});
  return rec.controller_epoch;
}

Result<MembersView> Registry::get_members(const GroupId& g) const {
  auto slot = find_slot(g);
  if (!slot) return make_error(Errc::unknown_group, g.hex());
  std::lock_guard lock(slot->mu);
  if (slot->deleted) return make_error(Errc::unknown_group, g.hex());
  const auto& r = slot->rec;
  return MembersView{r.members, r.controller, r.controller_epoch, r.active};
}

Result<GroupRecord> Registry::get_group(const GroupId& g) const {
  auto slot = find_slot(g);
  if (!slot) return make_error(Errc::unknown_group, g.hex());
  std::lock_guard lock(slot->mu);
  if (slot->deleted) return make_error(Errc::unknown_group, g.hex());
  return slot->rec;
}

std::vector<GroupRecord> Registry::all_groups() const {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::shared_lock lock(map_mu_);
    for (const auto& [id, slot] : groups_) slots.push_back(slot);
  }
  std::vector<GroupRecord> out;
  for (const auto& slot : slots) {
    std::lock_guard lock(slot->mu);
    if (!slot->deleted) out.push_back(slot->rec);
  }
  std::sort(out.begin(), out.end(),
            [](const GroupRecord& a, const GroupRecord& b) { return a.group_id < b.group_id; });
  return out;
}

void Registry::load(std::vector<GroupRecord> groups) {
  std::unique_lock lock(map_mu_);
  std::lock_guard index_lock(index_mu_);
  groups_.clear();
  by_address_.clear();
  for (auto& rec : groups) {
    auto slot = std::make_shared<Slot>();
    for (const auto& m : rec.members) by_address_.emplace(m.address, rec.group_id);
    slot->rec = std::move(rec);
    groups_[slot->rec.group_id] = std::move(slot);
  }
}

void Registry::apply(const RegistryChange& c) {
  std::unique_lock lock(map_mu_);
  std::lock_guard index_lock(index_mu_);
  auto drop_index = [&](const GroupRecord& rec) {
    for (const auto& m : rec.members) {
      auto [lo, hi] = by_address_.equal_range(m.address);
      for (auto it = lo; it != hi; ++it) {
        if (it->second == rec.group_id) {
          by_address_.erase(it);
          break;
        }
      }
    }
  };
  auto it = groups_.find(c.group_id);
  if (it != groups_.end()) {
    drop_index(it->second->rec);
    groups_.erase(it);
  }
  if (c.record) {
    auto slot = std::make_shared<Slot>();
    slot->rec = *c.record;
    for (const auto& m : slot->rec.members) by_address_.emplace(m.address, c.group_id);
    groups_[c.group_id] = std::move(slot);
  }
}

}  // namespace climanic
