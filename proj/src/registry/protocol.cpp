#include "climanic/registry/protocol.hpp"

#include "climanic/codec.hpp"

namespace climanic::registry_proto {

namespace {

json request(std::uint64_t req_id, const char* type) { return json{{"req_id", req_id}, {"type", type}}; }

json failure(std::uint64_t req_id, const std::string& type, const Error& e) {
  return json{{"req_id", req_id},
              {"type", type},
              {"ok", false},
              {"error", {{"code", to_string(e.code)}, {"message", e.message}}}};
}

json success(std::uint64_t req_id, const std::string& type, json result) {
  return json{{"req_id", req_id}, {"type", type}, {"ok", true}, {"result", std::move(result)}};
}

template <typename T, typename F>
json respond(std::uint64_t req_id, const std::string& type, const Result<T>& r, F&& encode) {
  if (!r) return failure(req_id, type, r.error());
  return success(req_id, type, encode(*r));
}

json summary_json(const GroupSummary& s) {
  return json{{"group_id", s.group_id},
              {"member_count", s.member_count},
              {"controller", s.controller},
              {"created_at", s.created_at}};
}

template <typename T, typename F>
Result<T> decode(const json& response, F&& f) {
  auto r = unwrap(response);
  if (!r) return r.error();
  try {
    return f(*r);
  } catch (const std::exception& e) {
    return make_error(Errc::protocol_error, e.what());
  }
}

}  // namespace

json create_group(std::uint64_t req_id, const std::string& course_id, const ParticipantId& creator,
                  const std::string& address) {
  auto j = request(req_id, "create_group");
  j["course_id"] = course_id;
  j["creator"] = creator;
  j["address"] = address;
  return j;
}

json list_active_groups(std::uint64_t req_id, const std::string& course_id) {
  auto j = request(req_id, "list_active_groups");
  j["course_id"] = course_id;
  return j;
}

json join_group(std::uint64_t req_id, const GroupId& g, const ParticipantId& p, const std::string& address) {
  auto j = request(req_id, "join_group");
  j["group_id"] = g;
  j["participant"] = p;
  j["address"] = address;
  return j;
}

json leave_group(std::uint64_t req_id, const GroupId& g, const ParticipantId& p,
                 const std::optional<LeaveFence>& fence) {
  auto j = request(req_id, "leave_group");
  j["group_id"] = g;
  j["participant"] = p;
  if (fence) {
    j["by"] = fence->by;
    j["expected_epoch"] = fence->expected_epoch;
  }
  return j;
}

json set_active(std::uint64_t req_id, const GroupId& g, bool active, const ParticipantId& by) {
  auto j = request(req_id, "set_active");
  j["group_id"] = g;
  j["active"] = active;
  j["by"] = by;
  return j;
}

json claim_leadership(std::uint64_t req_id, const GroupId& g, const ParticipantId& claimant,
                      ControlEpoch expected) {
  auto j = request(req_id, "claim_leadership");
  j["group_id"] = g;
  j["claimant"] = claimant;
  j["expected_epoch"] = expected;
  return j;
}

json get_members(std::uint64_t req_id, const GroupId& g) {
  auto j = request(req_id, "get_members");
  j["group_id"] = g;
  return j;
}

bool is_mutation(const std::string& type) {
  return type == "create_group" || type == "join_group" || type == "leave_group" || type == "set_active" ||
         type == "claim_leadership";
}

json handle(Registry& registry, const json& req) {
  std::uint64_t req_id = 0;
  std::string type;
  try {
    req_id = req.at("req_id").get<std::uint64_t>();
    type = req.at("type").get<std::string>();
    if (type == "create_group") {
      return respond(req_id, type,
                     registry.create_group(req.at("course_id").get<std::string>(),
                                           req.at("creator").get<ParticipantId>(),
                                           req.at("address").get<std::string>()),
                     [](const GroupRecord& g) { return json(g); });
    }
    if (type == "list_active_groups") {
      return respond(req_id, type, registry.list_active_groups(req.at("course_id").get<std::string>()),
                     [](const std::vector<GroupSummary>& gs) {
                       json arr = json::array();
                       for (const auto& s : gs) arr.push_back(summary_json(s));
                       return json{{"groups", arr}};
                     });
    }
    if (type == "join_group") {
      return respond(req_id, type,
                     registry.join_group(req.at("group_id").get<GroupId>(), req.at("participant").get<ParticipantId>(),
                                         req.at("address").get<std::string>()),
                     [](const JoinResult& r) {
                       return json{{"join_seq", r.join_seq},
                                   {"leader", r.leader},
                                   {"epoch", r.epoch},
                                   {"created_at", r.created_at}};
                     });
    }
    if (type == "leave_group") {
      std::optional<LeaveFence> fence;
      if (req.contains("by")) {
        fence = LeaveFence{req.at("by").get<ParticipantId>(), req.at("expected_epoch").get<ControlEpoch>()};
      }
      return respond(req_id, type,
                     registry.leave_group(req.at("group_id").get<GroupId>(),
                                          req.at("participant").get<ParticipantId>(), fence),
                     [](std::size_t n) { return json{{"member_count", n}}; });
    }
    if (type == "set_active") {
      return respond(req_id, type,
                     registry.set_active(req.at("group_id").get<GroupId>(), req.at("active").get<bool>(),
                                         req.at("by").get<ParticipantId>()),
                     [](const GroupRecord& g) { return json(g); });
    }
    if (type == "claim_leadership") {
      return respond(req_id, type,
                     registry.claim_leadership(req.at("group_id").get<GroupId>(),
                                               req.at("claimant").get<ParticipantId>(),
                                               req.at("expected_epoch").get<ControlEpoch>()),
                     [](ControlEpoch e) { return json{{"epoch", e}}; });
    }
    if (type == "get_members") {
      return respond(req_id, type, registry.get_members(req.at("group_id").get<GroupId>()),
                     [](const MembersView& v) {
                       return json{{"members", v.members},
                                   {"controller", v.controller},
                                   {"controller_epoch", v.controller_epoch},
                                   {"active", v.active}};
                     });
    }
    return failure(req_id, type, make_error(Errc::protocol_error, "unknown request type " + type));
  } catch (const std::exception& e) {
    return failure(req_id, type, make_error(Errc::protocol_error, e.what()));
  }
}

Result<json> unwrap(const json& response) {
  try {
    if (response.at("ok").get<bool>()) return response.at("result");
    const auto& err = response.at("error");
    auto code = errc_from_string(err.at("code").get<std::string>());
    return make_error(code.value_or(Errc::protocol_error), err.value("message", ""));
  } catch (const std::exception& e) {
    return make_error(Errc::protocol_error, e.what());
  }
}

Result<GroupRecord> as_group(const json& response) {
  return decode<GroupRecord>(response, [](const json& r) { return r.get<GroupRecord>(); });
}

Result<std::vector<GroupSummary>> as_groups(const json& response) {
  return decode<std::vector<GroupSummary>>(response, [](const json& r) {
    std::vector<GroupSummary> out;
    for (const auto& g : r.at("groups")) {
      out.push_back(GroupSummary{g.at("group_id").get<GroupId>(), g.at("member_count").get<std::size_t>(),
                                 g.at("controller").get<ParticipantId>(), g.at("created_at").get<Millis>()});
    }
    return out;
  });
}

Result<JoinResult> as_join(const json& response) {
  return decode<JoinResult>(response, [](const json& r) {
    return JoinResult{r.at("join_seq").get<JoinSeq>(), r.at("leader").get<MemberEntry>(),
                      r.at("epoch").get<ControlEpoch>(), r.at("created_at").get<Millis>()};
  });
}

Result<std::size_t> as_member_count(const json& response) {
  return decode<std::size_t>(response, [](const json& r) { return r.at("member_count").get<std::size_t>(); });
}

Result<ControlEpoch> as_epoch(const json& response) {
  return decode<ControlEpoch>(response, [](const json& r) { return r.at("epoch").get<ControlEpoch>(); });
}

Result<MembersView> as_members(const json& response) {
  return decode<MembersView>(response, [](const json& r) {
    return MembersView{r.at("members").get<std::vector<MemberEntry>>(), r.at("controller").get<ParticipantId>(),
                       r.at("controller_epoch").get<ControlEpoch>(), r.at("active").get<bool>()};
  });
}

}  // namespace climanic::registry_proto
