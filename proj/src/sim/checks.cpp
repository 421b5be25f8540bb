// Verdicts over a finished trace. Nothing here looks at engine internals:
// everything is read back from trace records.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "climanic/codec.hpp"
#include "climanic/log/log.hpp"
#include "climanic/log/replay.hpp"
#include "climanic/registry/registry.hpp"
#include "climanic/sim/sim.hpp"

namespace climanic::sim {

using nlohmann::json;

namespace {

constexpr Millis kOffsetTolerance = 250;
constexpr std::uint64_t kMessageLimit = 1024;

struct View {
  const Scenario& sc;
  const Trace& trace;
  std::map<std::string, json> finals;
  json groups = json::array();
  std::map<std::string, std::vector<LogEvent>> logs;
  std::map<std::string, Millis> crashed_at;

  // Classification at the end of the run.
  std::optional<std::string> leader;
  std::set<std::string> connected;
  std::map<std::string, std::string> disconnected;  // name -> why

  View(const Scenario& s, const Trace& t) : sc(s), trace(t) {
    for (const auto& r : t.records) {
      if (r.kind == "final") {
        finals[r.node] = r.data;
      } else if (r.kind == "registry_final") {
        groups = r.data.at("groups");
      } else if (r.kind == "log") {
        auto ev = log_event_from_json(r.data);
        if (ev) logs[r.node].push_back(std::move(*ev));
      } else if (r.kind == "crash") {
        crashed_at.emplace(r.node, r.at);
      }
    }
    classify();
  }

  bool live(const json& f) const {
    return f.at("alive").get<bool>() && f.at("started").get<bool>() && f.at("phase") != "departed";
  }

  void classify() {
    std::uint64_t best = 0;
    std::vector<std::string> at_best;
    for (const auto& [name, f] : finals) {
      if (!live(f) || f.at("phase") != "leading") continue;
      const auto e = f.at("epoch").get<std::uint64_t>();
      if (at_best.empty() || e > best) {
        best = e;
        at_best = {name};
      } else if (e == best) {
        at_best.push_back(name);
      }
    }
    if (at_best.size() == 1) leader = at_best.front();
    const Millis end = trace.end_ms;
    const Millis fresh = sc.timing.dead_after_ms;
    for (const auto& [name, f] : finals) {
      if (!f.at("alive").get<bool>() || !f.at("started").get<bool>()) continue;
      if (f.at("phase") == "departed") {
        disconnected[name] = f.contains("departure") ? "departed: " + f.at("departure").get<std::string>() : "left";
        continue;
      }
      if (leader && name == *leader) {
        connected.insert(name);
        continue;
      }
      if (!leader) {
        disconnected[name] = at_best.empty() ? "no leader" : "several leaders";
        continue;
      }
      const auto& lf = finals.at(*leader);
      if (f.at("phase") != "following") {
        disconnected[name] = "phase " + f.at("phase").get<std::string>();
      } else if (f.at("leader") != *leader || f.at("epoch") != lf.at("epoch")) {
        disconnected[name] = "follows " + f.at("leader").get<std::string>() + " at epoch " +
                             std::to_string(f.at("epoch").get<std::uint64_t>());
      } else if (end - f.at("leader_heard_at").get<Millis>() > fresh) {
        disconnected[name] = "leader silent";
      } else if (!lf.at("follower_contacts").contains(name) ||
                 end - lf.at("follower_contacts").at(name).get<Millis>() > fresh) {
        disconnected[name] = "silent at leader";
      } else {
        connected.insert(name);
      }
    }
  }

  bool exempt_after(const std::string& node, Millis since) const {
    auto c = crashed_at.find(node);
    if (c != crashed_at.end() && c->second >= since) return true;
    for (const auto& r : trace.records) {
      if (r.node == node && r.at >= since && r.kind == "note" && r.data.value("note", "") == "evicted") return true;
    }
    return !connected.count(node);
  }
};

CheckVerdict verdict(const std::string& name, bool pass, std::string detail) {
  return CheckVerdict{name, true, pass, std::move(detail)};
}

CheckVerdict not_applicable(const std::string& name, std::string why) {
  return CheckVerdict{name, false, true, std::move(why)};
}

CheckVerdict check_single_leader(const View& v) {
  std::map<std::uint64_t, std::set<std::string>> by_epoch;
  for (const auto& r : v.trace.records) {
    if (r.kind == "note" && r.data.value("note", "") == "became_leader") {
      by_epoch[r.data.at("epoch").get<std::uint64_t>()].insert(r.node);
    }
  }
  for (const auto& [e, who] : by_epoch) {
    if (who.size() > 1) {
      std::string names;
      for (const auto& n : who) names += (names.empty() ? "" : ",") + n;
      return verdict("single_leader", false, "epoch " + std::to_string(e) + " led by " + names);
    }
  }
  return verdict("single_leader", true, std::to_string(by_epoch.size()) + " leadership epochs");
}

CheckVerdict check_epoch_monotonic(const View& v) {
  std::map<std::string, std::uint64_t> last;
  std::optional<std::uint64_t> registry_last;
  for (const auto& r : v.trace.records) {
    std::optional<std::uint64_t> e;
    if (r.kind == "note" || r.kind == "log") e = r.data.at("epoch").get<std::uint64_t>();
    if (r.kind == "registry" && r.data.at("request").value("type", "") == "claim_leadership" &&
        r.data.at("response").value("ok", false)) {
      const auto won = r.data.at("response").at("result").at("epoch").get<std::uint64_t>();
      if (registry_last && won <= *registry_last) {
        return verdict("epoch_monotonic", false, "registry committed epoch " + std::to_string(won) + " after " +
                                                     std::to_string(*registry_last));
      }
      registry_last = won;
    }
    if (!e) continue;
    auto [it, fresh] = last.emplace(r.node, *e);
    if (!fresh) {
      if (*e < it->second) {
        return verdict("epoch_monotonic", false,
                       r.node + " went from epoch " + std::to_string(it->second) + " to " + std::to_string(*e) +
                           " at " + std::to_string(r.at) + " ms");
      }
      it->second = *e;
    }
  }
  return verdict("epoch_monotonic", true, "");
}

CheckVerdict check_convergence(const View& v) {
  const std::string name = "convergence";
  if (!v.leader) {
    if (v.disconnected.empty()) return verdict(name, true, "no live peers");
    return verdict(name, false, v.disconnected.begin()->second);
  }
  const auto& lf = v.finals.at(*v.leader);
  const auto slide = lf.at("state").at("slide_index");
  const auto offset = lf.at("offset").get<Millis>();
  std::ostringstream detail;
  for (const auto& n : v.connected) {
    const auto& f = v.finals.at(n);
    const auto o = f.at("offset").get<Millis>();
    const Millis diff = o > offset ? o - offset : offset - o;
    if (f.at("state").at("slide_index") != slide || diff > kOffsetTolerance) {
      detail << n << " on slide " << f.at("state").at("slide_index") << " at " << o << " ms, leader " << *v.leader
             << " on slide " << slide << " at " << offset << " ms";
      return verdict(name, false, detail.str());
    }
  }
  if (v.sc.expect.min_connected && v.connected.size() < *v.sc.expect.min_connected) {
    detail << v.connected.size() << " connected, expected " << *v.sc.expect.min_connected;
    for (const auto& [n, why] : v.disconnected) detail << "; " << n << ": " << why;
    return verdict(name, false, detail.str());
  }
  detail << v.connected.size() << " connected on slide " << slide;
  if (!v.disconnected.empty()) {
    detail << ", " << v.disconnected.size() << " disconnected (";
    const char* sep = "";
    for (const auto& [n, why] : v.disconnected) {
      detail << sep << n << ": " << why;
      sep = "; ";
    }
    detail << ")";
  }
  return verdict(name, true, detail.str());
}

struct Request {
  std::string node;
  std::uint64_t id = 0;
  Millis at = 0;
  std::string race;
  std::vector<std::string> outcomes;
};

std::vector<Request> collect_requests(const View& v) {
  std::vector<Request> out;
  for (const auto& r : v.trace.records) {
    if (r.kind == "script" && r.data.value("op", "") == "request" && r.data.contains("request_id")) {
      out.push_back(Request{r.node, r.data.at("request_id").get<std::uint64_t>(), r.at, r.data.value("race", ""), {}});
    }
  }
  for (const auto& r : v.trace.records) {
    if (r.kind != "note" || r.data.value("note", "") != "outcome") continue;
    const auto id = r.data.at("request_id").get<std::uint64_t>();
    for (auto& q : out) {
      if (q.node == r.node && q.id == id) q.outcomes.push_back(r.data.at("outcome").get<std::string>());
    }
  }
  return out;
}

CheckVerdict check_exactly_one_outcome(const View& v) {
  const std::string name = "exactly_one_outcome";
  const auto reqs = collect_requests(v);
  if (reqs.empty()) return not_applicable(name, "no control requests");
  std::size_t settled = 0, exempt = 0;
  for (const auto& q : reqs) {
    const std::string who = q.node + " request " + std::to_string(q.id);
    if (q.outcomes.size() > 1) return verdict(name, false, who + " saw " + std::to_string(q.outcomes.size()) + " outcomes");
    if (q.outcomes.empty()) {
      if (v.exempt_after(q.node, q.at)) {
        ++exempt;
        continue;
      }
      return verdict(name, false, who + " never resolved");
    }
    ++settled;
  }
  return verdict(name, true,
                 std::to_string(settled) + " resolved" + (exempt ? ", " + std::to_string(exempt) + " abandoned" : ""));
}

CheckVerdict check_race(const View& v) {
  const std::string name = "race";
  std::map<std::string, std::vector<Request>> races;
  for (auto& q : collect_requests(v)) {
    if (!q.race.empty()) races[q.race].push_back(std::move(q));
  }
  if (races.empty()) return not_applicable(name, "no tagged races");
  for (const auto& [tag, reqs] : races) {
    int granted = 0;
    for (const auto& q : reqs) {
      if (q.outcomes.size() != 1) {
        return verdict(name, false,
                       "race " + tag + ": " + q.node + " saw " + std::to_string(q.outcomes.size()) + " outcomes");
      }
      if (q.outcomes.front() == "granted") ++granted;
    }
    if (granted != 1) return verdict(name, false, "race " + tag + ": " + std::to_string(granted) + " granted");
  }
  return verdict(name, true, std::to_string(races.size()) + " races, one winner each");
}

CheckVerdict check_failover(const View& v) {
  const std::string name = "failover";
  const Millis bound = v.sc.timing.dead_after_ms + 2 * v.sc.max_latency();
  std::map<std::string, std::uint64_t> members;  // registry view: participant -> join seq
  std::set<std::string> down;
  std::size_t checked = 0;
  std::size_t idx = 0;
  const auto& recs = v.trace.records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    if (r.kind == "registry" && r.data.at("response").value("ok", false)) {
      const auto& req = r.data.at("request");
      const auto type = req.value("type", "");
      const auto& res = r.data.at("response").at("result");
      if (type == "create_group") {
        for (const auto& m : res.at("members")) {
          members[m.at("participant").get<std::string>()] = m.at("join_seq").get<std::uint64_t>();
        }
      } else if (type == "join_group") {
        members[req.at("participant").get<std::string>()] = res.at("join_seq").get<std::uint64_t>();
      } else if (type == "leave_group") {
        members.erase(req.at("participant").get<std::string>());
      }
    }
    if (r.kind != "crash") continue;
    down.insert(r.node);
    if (r.data.at("phase") != "leading") continue;
    ++checked;
    const auto epoch = r.data.at("epoch").get<std::uint64_t>();

    std::optional<std::pair<std::uint64_t, std::string>> expected;
    for (const auto& [p, seq] : members) {
      if (down.count(p)) continue;
      if (!expected || seq < expected->first) expected = std::make_pair(seq, p);
    }
    if (!expected) continue;  // nobody left to take over

    const TraceRecord* commit = nullptr;
    for (idx = i + 1; idx < recs.size(); ++idx) {
      const auto& c = recs[idx];
      if (c.kind == "registry" && c.data.at("request").value("type", "") == "claim_leadership" &&
          c.data.at("response").value("ok", false)) {
        commit = &c;
        break;
      }
    }
    const std::string crash = r.node + " crash at " + std::to_string(r.at) + " ms";
    if (commit == nullptr) return verdict(name, false, crash + ": no leadership claim committed");
    const auto winner = commit->data.at("request").at("claimant").get<std::string>();
    const auto won = commit->data.at("response").at("result").at("epoch").get<std::uint64_t>();
    if (winner != expected->second) {
      return verdict(name, false, crash + ": " + winner + " took over, expected " + expected->second);
    }
    if (won != epoch + 1) {
      return verdict(name, false, crash + ": took over at epoch " + std::to_string(won) + " from " +
                                      std::to_string(epoch));
    }
    if (commit->at - r.at > bound) {
      return verdict(name, false, crash + ": took over after " + std::to_string(commit->at - r.at) + " ms, bound " +
                                      std::to_string(bound) + " ms");
    }
    const bool noted = std::any_of(recs.begin() + static_cast<std::ptrdiff_t>(idx), recs.end(), [&](const TraceRecord& n) {
      return n.node == winner && n.kind == "note" && n.data.value("note", "") == "became_leader" &&
             n.data.at("epoch").get<std::uint64_t>() == won;
    });
    if (!noted) return verdict(name, false, crash + ": " + winner + " committed but never led");
  }
  if (checked == 0) return not_applicable(name, "no leader crashed");
  return verdict(name, true, std::to_string(checked) + " leader crash(es) handled within " + std::to_string(bound) + " ms");
}

CheckVerdict check_chat_order(const View& v) {
  const std::string name = "chat_order";
  if (!v.leader) return verdict(name, false, "no single leader at the end");
  // Late joiners start mid-transcript, so compare seq by seq.
  std::map<std::uint64_t, std::pair<std::string, json>> merged;  // chat seq -> (holder, entry)
  const auto next = v.finals.at(*v.leader).at("chat_next");
  for (const auto& n : v.connected) {
    const auto& f = v.finals.at(n);
    if (f.at("chat_next") != next) {
      return verdict(name, false, n + " expects chat seq " + f.at("chat_next").dump() + ", leader " + next.dump());
    }
    for (const auto& c : f.at("transcript")) {
      auto [it, fresh] = merged.try_emplace(c.at(0).get<std::uint64_t>(), n, c);
      if (!fresh && it->second.second != c) {
        return verdict(name, false, n + " and " + it->second.first + " disagree at chat seq " + c.at(0).dump());
      }
    }
  }
  std::set<std::pair<std::string, std::uint64_t>> seen;
  std::map<std::string, std::size_t> by_origin_seen;
  for (const auto& [seq, held] : merged) {
    const auto& c = held.second;
    if (!seen.emplace(c.at(1).get<std::string>(), c.at(2).get<std::uint64_t>()).second) {
      return verdict(name, false, "chat from " + c.at(1).get<std::string>() + " appears twice");
    }
    ++by_origin_seen[c.at(1).get<std::string>()];
  }
  std::map<std::string, std::size_t> by_origin_sent;
  std::size_t sent = 0;
  for (const auto& r : v.trace.records) {
    if (r.kind == "script" && r.data.value("op", "") == "chat" && r.data.value("ok", false) &&
        !v.exempt_after(r.node, r.at)) {
      ++by_origin_sent[r.node];
      ++sent;
    }
  }
  for (const auto& [origin, count] : by_origin_sent) {
    if (by_origin_seen[origin] < count) {
      return verdict(name, false, origin + " sent " + std::to_string(count) + " chats, " +
                                      std::to_string(by_origin_seen[origin]) + " reached the transcript");
    }
  }
  return verdict(name, true, std::to_string(merged.size()) + " chats in one order, " + std::to_string(sent) +
                                 " sent by connected peers");
}

CheckVerdict check_frugality(const View& v) {
  std::uint64_t largest = 0;
  std::string what;
  for (const auto& r : v.trace.records) {
    if (r.kind != "send") continue;
    const auto b = r.data.at("bytes").get<std::uint64_t>();
    if (b > largest) {
      largest = b;
      what = r.data.at("type").get<std::string>();
    }
  }
  return verdict("frugality", largest < kMessageLimit,
                 "largest message " + std::to_string(largest) + " B" + (what.empty() ? "" : " (" + what + ")"));
}

CheckVerdict check_control_bytes(const View& v) {
  const std::string name = "control_bytes";
  if (!v.sc.expect.max_control_bytes) return not_applicable(name, "no budget set");
  std::uint64_t total = 0;
  for (const auto& r : v.trace.records) {
    if (r.kind == "send" && r.data.at("control").get<bool>()) total += r.data.at("bytes").get<std::uint64_t>();
  }
  return verdict(name, total < *v.sc.expect.max_control_bytes,
                 std::to_string(total) + " B of coordination traffic, budget " +
                     std::to_string(*v.sc.expect.max_control_bytes) + " B");
}

CheckVerdict check_log_replay(const View& v) {
  const std::string name = "log_replay";
  std::size_t peers = 0;
  for (const auto& [node, f] : v.finals) {
    if (!f.at("started").get<bool>()) continue;
    ++peers;
    auto it = v.logs.find(node);
    const std::vector<LogEvent> empty;
    const auto& log = it == v.logs.end() ? empty : it->second;
    auto r = replay(log, v.sc.manifest);
    if (!r) return verdict(name, false, node + ": " + std::string(to_string(r.code())) + " " + r.error().message);
    const auto live = f.at("state").get<PlaybackState>();
    if (!(r->state == live)) {
      return verdict(name, false, node + " replays to " + json(r->state).dump() + ", live " + json(live).dump());
    }
    const auto& s = r->summary;
    if (s.control_transfers != s.grants_committed + s.failover_wins) {
      return verdict(name, false, node + " counts " + std::to_string(s.control_transfers) + " epoch rises but " +
                                      std::to_string(s.grants_committed) + " grants and " +
                                      std::to_string(s.failover_wins) + " failover wins");
    }
  }
  return verdict(name, true, std::to_string(peers) + " logs replayed");
}

CheckVerdict check_registry_integrity(const View& v) {
  const std::string name = "registry_integrity";
  if (v.groups.empty()) return verdict(name, false, "no group was created");
  const auto g = v.groups.at(0).get<GroupRecord>();
  std::set<std::string> members;
  for (const auto& m : g.members) members.insert(m.participant.str());
  if (!members.empty() && !members.count(g.controller.str())) {
    return verdict(name, false, "controller " + g.controller.str() + " is not a member");
  }
  if (v.leader) {
    const auto& lf = v.finals.at(*v.leader);
    if (g.controller.str() != *v.leader || g.controller_epoch.value != lf.at("epoch").get<std::uint64_t>()) {
      return verdict(name, false, "registry names " + g.controller.str() + " at epoch " +
                                      std::to_string(g.controller_epoch.value) + ", peers follow " + *v.leader);
    }
  }
  for (const auto& n : v.connected) {
    if (!members.count(n)) return verdict(name, false, n + " is connected but not a member");
  }
  for (const auto& [n, t] : v.crashed_at) {
    if (t + v.sc.quiescence() <= v.trace.end_ms && members.count(n)) {
      return verdict(name, false, n + " crashed at " + std::to_string(t) + " ms and is still a member");
    }
  }
  return verdict(name, true, std::to_string(members.size()) + " members, controller " + g.controller.str());
}

}  // namespace

std::vector<CheckVerdict> evaluate(const Scenario& scenario, const Trace& trace) {
  const View v(scenario, trace);
  std::vector<CheckVerdict> out;
  for (const auto& c : scenario.checks) {
    if (c == "single_leader") out.push_back(check_single_leader(v));
    else if (c == "epoch_monotonic") out.push_back(check_epoch_monotonic(v));
    else if (c == "convergence") out.push_back(check_convergence(v));
    else if (c == "exactly_one_outcome") out.push_back(check_exactly_one_outcome(v));
    else if (c == "race") out.push_back(check_race(v));
    else if (c == "failover") out.push_back(check_failover(v));
    else if (c == "chat_order") out.push_back(check_chat_order(v));
    else if (c == "frugality") out.push_back(check_frugality(v));
    else if (c == "control_bytes") out.push_back(check_control_bytes(v));
    else if (c == "log_replay") out.push_back(check_log_replay(v));
    else if (c == "registry_integrity") out.push_back(check_registry_integrity(v));
  }
  return out;
}

Result<void> write_trace(const Trace& trace, const std::filesystem::path& dir, const CoursewareManifest* manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) return make_error(Errc::invalid_argument, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "trace.jsonl");
  if (!out) return make_error(Errc::invalid_argument, "cannot write " + (dir / "trace.jsonl").string());
  out << json{{"scenario", trace.scenario}, {"seed", trace.seed}, {"end_ms", trace.end_ms}}.dump() << '\n';
  std::map<std::string, std::ofstream> logs;
  for (const auto& r : trace.records) {
    out << to_json(r).dump() << '\n';
    if (r.kind != "log") continue;
    auto ev = log_event_from_json(r.data);
    if (!ev) continue;
    auto [it, fresh] = logs.try_emplace(r.node);
    if (fresh) it->second.open(dir / (r.node + ".log"));
    it->second << encode_log_line(*ev);
  }
  if (!out) return make_error(Errc::storage_full, "short write to " + (dir / "trace.jsonl").string());
  if (manifest) {
    std::ofstream m(dir / "manifest.json");
    m << json(*manifest).dump(2) << '\n';
    if (!m) return make_error(Errc::storage_full, "short write to " + (dir / "manifest.json").string());
  }
  return {};
}

SweepResult sweep(const Scenario& scenario, std::uint64_t first, std::uint64_t last,
                  const std::optional<std::filesystem::path>& trace_out) {
  const auto t0 = std::chrono::steady_clock::now();
  SweepResult out;
  out.scenario = scenario.name;
  for (const auto& c : scenario.checks) out.checks.emplace_back(c, CheckTally{});
  for (std::uint64_t seed = first; seed <= last; ++seed) {
    auto r = run(scenario, seed);
    ++out.runs;
    for (const auto& rec : r.trace.records) {
      if (rec.kind == "send") out.max_message_bytes = std::max(out.max_message_bytes, rec.data.at("bytes").get<std::uint64_t>());
    }
    for (const auto& v : r.verdicts) {
      auto it = std::find_if(out.checks.begin(), out.checks.end(), [&](const auto& p) { return p.first == v.name; });
      auto& tally = it->second;
      if (!v.applicable) {
        ++tally.not_applicable;
      } else if (v.pass) {
        ++tally.pass;
      } else {
        ++tally.fail;
        if (!tally.first_failing_seed) {
          tally.first_failing_seed = seed;
          tally.first_failure = v.detail;
        }
      }
    }
    if (!r.passed()) {
      ++out.failed_runs;
      if (!out.first_failing_seed) {
        out.first_failing_seed = seed;
        if (trace_out) {
          auto dir = *trace_out / (scenario.name + "-seed" + std::to_string(seed));
          if (write_trace(r.trace, dir, &scenario.manifest)) out.first_failure_trace = dir;
        }
      }
    }
    if (seed == last) break;
  }
  out.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::string format_sweep(const SweepResult& r) {
  std::ostringstream os;
  os << r.scenario << ": " << r.runs << " runs, " << r.failed_runs << " failed, largest message "
     << r.max_message_bytes << " B, " << std::fixed;
  os.precision(1);
  os << r.elapsed_s << " s\n";
  char line[160];
  std::snprintf(line, sizeof line, "  %-22s %8s %8s %8s\n", "check", "pass", "fail", "n/a");
  os << line;
  for (const auto& [name, t] : r.checks) {
    std::snprintf(line, sizeof line, "  %-22s %8llu %8llu %8llu\n", name.c_str(),
                  static_cast<unsigned long long>(t.pass), static_cast<unsigned long long>(t.fail),
                  static_cast<unsigned long long>(t.not_applicable));
    os << line;
    if (t.first_failing_seed) os << "    first failure seed " << *t.first_failing_seed << ": " << t.first_failure << '\n';
  }
  if (r.first_failure_trace) os << "  trace: " << r.first_failure_trace->string() << '\n';
  return os.str();
}

}  // namespace climanic::sim
