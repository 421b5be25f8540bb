#include "climanic/sim/scenario.hpp"

#include <algorithm>
#include <fstream>

namespace climanic::sim {

using nlohmann::json;

namespace {

const std::set<std::string> kOps = {"play", "pause", "seek", "slide", "next", "prev", "request", "grant",
                                    "deny", "transfer", "chat", "leave", "crash", "set_active"};
const std::set<std::string> kPeerTargetOps = {"grant", "deny", "transfer"};

Error invalid(const std::string& what) { return make_error(Errc::scenario_invalid, what); }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

Result<CoursewareManifest> manifest_field(const json& j, const std::filesystem::path& base_dir,
                                          const std::string& course_id) {
  if (!j.contains("manifest")) return uniform_manifest(course_id, "lecture", 20, 20 * 60'000);
  const auto& m = j.at("manifest");
  if (m.is_string()) {
    std::filesystem::path p = m.get<std::string>();
    if (p.is_relative() && !base_dir.empty() && std::filesystem::exists(base_dir / p)) p = base_dir / p;
    return load_manifest(p);
  }
  if (m.is_object() && m.contains("generate")) {
    const auto& g = m.at("generate");
    const auto slides = g.at("slides").get<std::uint64_t>();
    const auto slide_ms = g.at("slide_ms").get<Millis>();
    if (slides == 0 || slide_ms == 0) return invalid("generated manifest needs slides and slide_ms above zero");
    return uniform_manifest(course_id, g.value("lecture_id", "lecture"), slides, slides * slide_ms);
  }
  return parse_manifest(m);
}

}  // namespace

Millis Scenario::max_latency() const noexcept {
  return net.latency_max_ms + (net.reorder > 0.0 ? net.reorder_extra_ms : 0);
}

Millis Scenario::last_activity() const noexcept {
  Millis t = 0;
  for (const auto& p : peers) t = std::max(t, p.join_at_ms);
  for (const auto& s : script) t = std::max(t, s.at_ms);
  for (const auto& p : net.partitions) t = std::max(t, p.end_ms);
  for (const auto& l : net.links) {
    if (l.end_ms) t = std::max(t, *l.end_ms);
  }
  if (traffic) t = std::max(t, traffic->to_ms);
  return t;
}

const std::vector<std::string>& all_check_names() {
  static const std::vector<std::string> names = {
      "single_leader", "epoch_monotonic", "convergence", "exactly_one_outcome", "race", "failover",
      "chat_order",    "frugality",       "control_bytes", "log_replay",        "registry_integrity"};
  return names;
}

Result<Scenario> parse_scenario(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) return invalid("scenario must be a JSON object");
  Scenario s;
  try {
    s.name = j.at("name").get<std::string>();
    s.description = j.value("description", "");
    s.duration_ms = j.at("duration_ms").get<Millis>();
    s.course_id = j.value("course_id", "course");

    auto manifest = manifest_field(j, base_dir, s.course_id);
    if (!manifest) return invalid("manifest: " + manifest.error().message);
    s.manifest = *manifest;

    if (j.contains("net")) {
      const auto& n = j.at("net");
      if (n.contains("latency_ms")) {
        const auto& l = n.at("latency_ms");
        if (!l.is_array() || l.size() != 2) return invalid("net.latency_ms must be [min, max]");
        s.net.latency_min_ms = l.at(0).get<Millis>();
        s.net.latency_max_ms = l.at(1).get<Millis>();
      }
      s.net.loss = get_or(n, "loss", 0.0);
      s.net.reorder = get_or(n, "reorder", 0.0);
      s.net.reorder_extra_ms = get_or<Millis>(n, "reorder_extra_ms", 150);
      for (const auto& p : n.value("partitions", json::array())) {
        Partition part;
        part.start_ms = p.at("from").get<Millis>();
        part.end_ms = p.at("to").get<Millis>();
        for (const auto& name : p.at("nodes")) part.nodes.insert(name.get<std::string>());
        s.net.partitions.push_back(std::move(part));
      }
      for (const auto& l : n.value("links", json::array())) {
        const auto& between = l.at("between");
        if (!between.is_array() || between.size() != 2) return invalid("net.links[].between must name two nodes");
        LinkOverride o{between.at(0).get<std::string>(), between.at(1).get<std::string>(), l.at("loss").get<double>(),
                       get_or<Millis>(l, "from", 0), std::nullopt};
        if (l.contains("to")) o.end_ms = l.at("to").get<Millis>();
        s.net.links.push_back(std::move(o));
      }
    }

    if (j.contains("timing")) {
      const auto& t = j.at("timing");
      s.timing.heartbeat_ms = get_or(t, "heartbeat_ms", s.timing.heartbeat_ms);
      s.timing.dead_after_ms = get_or(t, "dead_after_ms", s.timing.dead_after_ms);
      s.timing.backoff_ms = get_or(t, "backoff_ms", s.timing.backoff_ms);
      s.timing.handoff_timeout_ms = get_or(t, "handoff_timeout_ms", s.timing.handoff_timeout_ms);
      s.timing.join_timeout_ms = get_or(t, "join_timeout_ms", s.timing.join_timeout_ms);
      s.timing.retransmit_ms = get_or(t, "retransmit_ms", s.timing.retransmit_ms);
    }

    for (const auto& p : j.at("peers")) {
      PeerSpec spec;
      spec.name = p.at("name").get<std::string>();
      spec.join_at_ms = get_or<Millis>(p, "join_at", 0);
      spec.creates = get_or(p, "creates", false);
      spec.foreign_manifest = get_or(p, "foreign_manifest", false);
      s.peers.push_back(std::move(spec));
    }

    for (const auto& st : j.value("script", json::array())) {
      auto step = parse_script_step(st);
      if (!step) return invalid(step.error().message);
      s.script.push_back(std::move(*step));
    }
    std::stable_sort(s.script.begin(), s.script.end(),
                     [](const ScriptStep& a, const ScriptStep& b) { return a.at_ms < b.at_ms; });

    if (j.contains("traffic")) {
      const auto& t = j.at("traffic");
      Traffic tr;
      tr.from_ms = t.at("from").get<Millis>();
      tr.to_ms = t.at("to").get<Millis>();
      tr.events = get_or(t, "events", 0);
      tr.chats = get_or(t, "chats", 0);
      tr.jump_prob = get_or(t, "jump_prob", 0.15);
      s.traffic = tr;
    }

    if (j.contains("leader_policy")) {
      const auto& lp = j.at("leader_policy");
      const auto mode = lp.at("mode").get<std::string>();
      if (mode == "manual") {
        s.policy.mode = LeaderPolicy::Mode::manual;
      } else if (mode == "grant_first") {
        s.policy.mode = LeaderPolicy::Mode::grant_first;
      } else if (mode == "deny") {
        s.policy.mode = LeaderPolicy::Mode::deny;
      } else {
        return invalid("leader_policy.mode must be manual, grant_first or deny");
      }
      s.policy.decide_after_ms = get_or<Millis>(lp, "decide_after_ms", 300);
    }

    if (j.contains("checks")) {
      s.checks = j.at("checks").get<std::vector<std::string>>();
    } else {
      s.checks = all_check_names();
    }

    if (j.contains("expect")) {
      const auto& e = j.at("expect");
      if (e.contains("min_connected")) s.expect.min_connected = e.at("min_connected").get<std::size_t>();
      if (e.contains("max_control_bytes")) s.expect.max_control_bytes = e.at("max_control_bytes").get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    return invalid(std::string("malformed scenario: ") + e.what());
  }

  // Consistency.
  if (s.duration_ms == 0) return invalid("duration_ms must be positive");
  if (s.peers.empty()) return invalid("a scenario needs at least one peer");
  std::set<std::string> names;
  for (const auto& p : s.peers) {
    if (!ParticipantId::parse(p.name)) return invalid("bad peer name '" + p.name + "'");
    if (p.name == kRegistryNode || p.name == "@leader") return invalid("peer name '" + p.name + "' is reserved");
    if (!names.insert(p.name).second) return invalid("duplicate peer '" + p.name + "'");
    if (p.join_at_ms > s.duration_ms) return invalid("peer " + p.name + " joins after the scenario ends");
  }
  const auto creators = std::count_if(s.peers.begin(), s.peers.end(), [](const PeerSpec& p) { return p.creates; });
  if (creators > 1) return invalid("at most one peer may create the group");
  if (creators == 0) s.peers.front().creates = true;

  auto known_node = [&](const std::string& n) { return n == kRegistryNode || names.count(n) > 0; };
  if (s.net.latency_min_ms > s.net.latency_max_ms) return invalid("net.latency_ms min exceeds max");
  for (double p : {s.net.loss, s.net.reorder}) {
    if (p < 0.0 || p > 1.0) return invalid("probabilities must lie in [0, 1]");
  }
  for (const auto& part : s.net.partitions) {
    if (part.start_ms >= part.end_ms) return invalid("partition must end after it starts");
    if (part.end_ms > s.duration_ms) return invalid("partition outlasts the scenario");
    for (const auto& n : part.nodes) {
      if (!known_node(n)) return invalid("partition names unknown node '" + n + "'");
    }
  }
  for (const auto& l : s.net.links) {
    if (!known_node(l.a) || !known_node(l.b)) return invalid("link override names an unknown node");
    if (l.loss < 0.0 || l.loss > 1.0) return invalid("probabilities must lie in [0, 1]");
    if (l.end_ms && *l.end_ms <= l.start_ms) return invalid("link override must end after it starts");
  }
  for (const auto& st : s.script) {
    if (st.at_ms > s.duration_ms) return invalid("script step at " + std::to_string(st.at_ms) + " is past the end");
    if (!kOps.count(st.op)) return invalid("unknown script op '" + st.op + "'");
    if (st.peer != "@leader" && !names.count(st.peer)) return invalid("script names unknown peer '" + st.peer + "'");
    if (kPeerTargetOps.count(st.op) && !names.count(st.target_peer)) {
      return invalid(st.op + " needs a target peer");
    }
  }
  if (s.traffic) {
    if (s.traffic->from_ms >= s.traffic->to_ms || s.traffic->to_ms > s.duration_ms) {
      return invalid("traffic window must lie inside the scenario");
    }
    if (s.traffic->events < 0 || s.traffic->chats < 0) return invalid("traffic counts must not be negative");
  }
  const auto& known = all_check_names();
  for (const auto& c : s.checks) {
    if (std::find(known.begin(), known.end(), c) == known.end()) return invalid("unknown check '" + c + "'");
  }
  if (std::find(s.checks.begin(), s.checks.end(), "convergence") != s.checks.end() &&
      s.last_activity() + s.quiescence() > s.duration_ms) {
    return invalid("duration leaves no quiet period of " + std::to_string(s.quiescence()) +
                   " ms after the last activity at " + std::to_string(s.last_activity()) + " ms");
  }
  return s;
}

Result<Scenario> load_scenario(const std::filesystem::path& given) {
  auto path = given;
  if (!std::filesystem::exists(path) && path.extension() != ".json") path += ".json";
  std::ifstream in(path);
  if (!in) return invalid("cannot read scenario " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return invalid(path.string() + " is not valid JSON");
  return parse_scenario(j, path.parent_path());
}

}  // namespace climanic::sim
