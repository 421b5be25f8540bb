#include "climanic/peer/command.hpp"

#include <set>

namespace climanic {

using nlohmann::json;

namespace {

const std::set<std::string> kOps = {"play", "pause", "seek", "slide", "next", "prev", "request",
                                    "grant", "deny", "transfer", "chat", "leave", "set_active"};

}  // namespace

bool is_command_op(const std::string& op) { return kOps.count(op) > 0; }

bool needs_peer_target(const std::string& op) { return op == "grant" || op == "deny" || op == "transfer"; }

Result<UserCommand> parse_command(const json& j) {
  if (!j.is_object() || !j.contains("op") || !j.at("op").is_string()) {
    return make_error(Errc::invalid_argument, "command needs a string 'op'");
  }
  UserCommand c;
  c.op = j.at("op").get<std::string>();
  if (!is_command_op(c.op)) return make_error(Errc::invalid_argument, "unknown command '" + c.op + "'");
  if (j.contains("target")) {
    const auto& t = j.at("target");
    if (t.is_string()) {
      c.target_peer = t.get<std::string>();
    } else if (t.is_number_integer() && t.get<std::int64_t>() >= 0) {
      c.target = t.get<std::uint64_t>();
    } else {
      return make_error(Errc::invalid_argument, "target must be a peer name or a non-negative number");
    }
  }
  if (j.contains("text")) {
    if (!j.at("text").is_string()) return make_error(Errc::invalid_argument, "text must be a string");
    c.text = j.at("text").get<std::string>();
  }
  if (j.contains("active")) {
    if (!j.at("active").is_boolean()) return make_error(Errc::invalid_argument, "active must be a boolean");
    c.active = j.at("active").get<bool>();
  }
  if (needs_peer_target(c.op) && c.target_peer.empty()) {
    return make_error(Errc::invalid_argument, c.op + " needs a target peer");
  }
  if ((c.op == "seek" || c.op == "slide") && !j.contains("target")) {
    return make_error(Errc::invalid_argument, c.op + " needs a numeric target");
  }
  return c;
}

Result<ScriptStep> parse_script_step(const json& j) {
  if (!j.is_object()) return make_error(Errc::invalid_argument, "script step must be an object");
  try {
    ScriptStep step;
    step.at_ms = j.at("at").get<Millis>();
    step.peer = j.at("peer").get<std::string>();
    step.op = j.at("op").get<std::string>();
    if (j.contains("target")) {
      if (j.at("target").is_string()) {
        step.target_peer = j.at("target").get<std::string>();
      } else {
        step.target = j.at("target").get<std::uint64_t>();
      }
    }
    step.text = j.value("text", "");
    step.race = j.value("race", "");
    step.flag = j.value("active", false);
    return step;
  } catch (const json::exception& e) {
    return make_error(Errc::invalid_argument, std::string("script step: ") + e.what());
  }
}

Result<json> run_command(PeerEngine& e, const UserCommand& c, Millis now) {
  json extra = json::object();
  Result<void> r;
  const auto& op = c.op;
  if (op == "play") {
    r = e.issue(EventKind::play, 0, now);
  } else if (op == "pause") {
    r = e.issue(EventKind::pause, 0, now);
  } else if (op == "seek") {
    r = e.issue(EventKind::seek, c.target, now);
  } else if (op == "slide") {
    r = e.issue(EventKind::slide_change, c.target, now);
  } else if (op == "next") {
    extra["target"] = e.state().slide_index + 1;
    r = e.issue(EventKind::slide_change, e.state().slide_index + 1, now);
  } else if (op == "prev") {
    if (e.state().slide_index == 0) return make_error(Errc::out_of_bounds, "already on the first slide");
    extra["target"] = e.state().slide_index - 1;
    r = e.issue(EventKind::slide_change, e.state().slide_index - 1, now);
  } else if (op == "request") {
    auto id = e.request_control(now);
    if (!id) return id.error();
    extra["request_id"] = *id;
  } else if (op == "grant" || op == "deny") {
    r = e.decide(op == "grant", ParticipantId::of(c.target_peer), now);
  } else if (op == "transfer") {
    r = e.transfer(ParticipantId::of(c.target_peer), now);
  } else if (op == "chat") {
    r = e.send_chat(c.text, now);
  } else if (op == "leave") {
    r = e.leave(now);
  } else if (op == "set_active") {
    extra["active"] = c.active;
    r = e.set_active(c.active, now);
  } else {
    return make_error(Errc::invalid_argument, "unknown command '" + op + "'");
  }
  if (!r) return r.error();
  return extra;
}

}  // namespace climanic
