#include "climanic/sim/sim.hpp"

#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <random>
#include <variant>

#include "climanic/codec.hpp"
#include "climanic/log/log.hpp"
#include "climanic/peer/command.hpp"
#include "climanic/peer/engine.hpp"
#include "climanic/peer/link.hpp"
#include "climanic/registry/protocol.hpp"
#include "climanic/registry/registry.hpp"
#include "climanic/wire.hpp"

namespace climanic::sim {

using nlohmann::json;

namespace {

using Body = std::variant<SessionMessage, json>;
using Links = ReliableLinks<Body>;
using Frame = LinkFrame<Body>;

constexpr Millis kNever = ~Millis{0};
constexpr Millis kJoinRetryMs = 100;

std::string address_for(const std::string& node) { return node + ":1"; }

std::string node_for(const std::string& address) {
  auto colon = address.rfind(':');
  return colon == std::string::npos ? address : address.substr(0, colon);
}

struct SimNode {
  std::string name;
  bool alive = true;
  std::unique_ptr<Links> links;
  std::uint64_t timer_gen = 0;
  Millis timer_at = kNever;
};

class Simulation;

struct PeerNode final : SimNode, PeerEnv {
  Simulation* sim = nullptr;
  PeerSpec spec;
  std::unique_ptr<PeerEngine> engine;
  bool started = false;
  bool decision_pending = false;
  std::uint64_t log_seq = 0;

  void send(const std::string& address, const SessionMessage& m) override;
  void disconnect(const std::string& address) override { links->forget(node_for(address)); }
  void registry_request(const json& request) override;
  void log(LogEvent ev) override;
  void note(const PeerNote& n) override;
};

class Simulation {
 public:
  Simulation(const Scenario& sc, std::uint64_t seed)
      : sc_(sc),
        seed_(seed),
        net_rng_(seed * 0x9E3779B97F4A7C15ULL + 1),
        registry_(CourseCatalog({sc.course_id}), [this] { return now_; }, seed) {
    trace_.scenario = sc.name;
    trace_.seed = seed;
    reg_node_.name = kRegistryNode;
    reg_node_.links = std::make_unique<Links>(sc.timing.retransmit_ms);

    const auto foreign = uniform_manifest(sc.course_id, "foreign", 3, 60'000);
    for (const auto& spec : sc.peers) {
      auto p = std::make_unique<PeerNode>();
      p->name = spec.name;
      p->sim = this;
      p->spec = spec;
      p->links = std::make_unique<Links>(sc.timing.retransmit_ms);
      PeerConfig cfg;
      cfg.self = ParticipantId::of(spec.name);
      cfg.address = address_for(spec.name);
      cfg.manifest = spec.foreign_manifest ? foreign : sc.manifest;
      cfg.heartbeat_ms = sc.timing.heartbeat_ms;
      cfg.dead_after_ms = sc.timing.dead_after_ms;
      cfg.backoff_ms = sc.timing.backoff_ms;
      cfg.handoff_timeout_ms = sc.timing.handoff_timeout_ms;
      cfg.join_timeout_ms = sc.timing.join_timeout_ms;
      p->engine = std::make_unique<PeerEngine>(cfg, *p);
      peers_by_name_[spec.name] = p.get();
      peers_.push_back(std::move(p));
    }

    script_ = sc.script;
    if (sc.traffic) generate_traffic(*sc.traffic, seed);
  }

  Trace run() {
    for (auto& p : peers_) {
      PeerNode* node = p.get();
      at(node->spec.join_at_ms, [this, node] { start(*node); });
    }
    for (const auto& step : script_) {
      at(step.at_ms, [this, &step] { exec(step); });
    }
    while (!queue_.empty() && queue_.top().at <= sc_.duration_ms) {
      Item item = queue_.top();
      queue_.pop();
      now_ = item.at;
      item.fn();
    }
    now_ = sc_.duration_ms;
    trace_.end_ms = now_;
    finish();
    return std::move(trace_);
  }

  // Called by PeerNode.
  void peer_send(PeerNode& from, const std::string& address, const SessionMessage& m) {
    const std::string body = encode_message(m);
    const auto to = node_for(address);
    record(from.name, "send",
           json{{"to", to},
                {"type", to_string(m.type)},
                {"bytes", body.size() + kFrameHeaderBytes},
                {"epoch", m.epoch.value},
                {"control", m.type != MessageType::heartbeat}});
    // Deliver what the wire would: the decoded bytes.
    auto decoded = decode_message(body);
    if (!decoded) {
      record(from.name, "drop", json{{"to", to}, {"reason", "encode"}, {"error", decoded.error().message}});
      return;
    }
    from.links->send(to, Body{std::move(*decoded)}, now_, transmit_from(from));
  }

  void peer_registry(PeerNode& from, const json& request) {
    from.links->send(kRegistryNode, Body{request}, now_, transmit_from(from));
  }

  void peer_log(PeerNode& from, LogEvent ev) {
    ev.seq = from.log_seq++;
    record(from.name, "log", json(ev));
  }

  void peer_note(PeerNode& from, const PeerNote& n) {
    json d{{"phase", to_string(n.phase)}, {"epoch", n.epoch.value}};
    switch (n.kind) {
      case PeerNote::Kind::phase: d["note"] = "phase"; break;
      case PeerNote::Kind::became_leader:
        d["note"] = "became_leader";
        d["join_seq"] = from.engine->join_seq().value;
        break;
      case PeerNote::Kind::adopted:
        d["note"] = "adopted";
        d["leader"] = from.engine->leader();
        break;
      case PeerNote::Kind::request_pending:
        d["note"] = "request_pending";
        d["participant"] = n.participant;
        d["request_id"] = n.request_id;
        schedule_policy(from, n.participant);
        break;
      case PeerNote::Kind::request_closed:
        d["note"] = "request_closed";
        d["participant"] = n.participant;
        d["request_id"] = n.request_id;
        d["outcome"] = to_string(n.outcome);
        break;
      case PeerNote::Kind::outcome:
        d["note"] = "outcome";
        d["request_id"] = n.request_id;
        d["outcome"] = to_string(n.outcome);
        break;
      case PeerNote::Kind::failed:
        d["note"] = "failed";
        d["code"] = to_string(n.code);
        d["message"] = n.message;
        break;
      case PeerNote::Kind::evicted: d["note"] = "evicted"; break;
      case PeerNote::Kind::roster:
      case PeerNote::Kind::applied:
      case PeerNote::Kind::chat:
        return;
    }
    if (!group_ && from.engine && from.engine->group() != GroupId{}) group_ = from.engine->group();
    record(from.name, "note", std::move(d));
  }

 private:
  struct Item {
    Millis at;
    std::uint64_t order;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Item& a, const Item& b) const {
      return a.at != b.at ? a.at > b.at : a.order > b.order;
    }
  };

  void at(Millis t, std::function<void()> fn) { queue_.push(Item{t, order_++, std::move(fn)}); }

  void record(const std::string& node, const char* kind, json data) {
    trace_.records.push_back(TraceRecord{now_, node, kind, std::move(data)});
  }

  SimNode* node(const std::string& name) {
    if (name == kRegistryNode) return &reg_node_;
    auto it = peers_by_name_.find(name);
    return it == peers_by_name_.end() ? nullptr : it->second;
  }

  // ------------------------------------------------------------ network

  bool cut(const std::string& a, const std::string& b) const {
    for (const auto& p : sc_.net.partitions) {
      if (now_ < p.start_ms || now_ >= p.end_ms) continue;
      if (p.nodes.count(a) != p.nodes.count(b)) return true;
    }
    return false;
  }

  double loss_between(const std::string& a, const std::string& b) const {
    for (const auto& l : sc_.net.links) {
      if (now_ < l.start_ms || (l.end_ms && now_ >= *l.end_ms)) continue;
      if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return l.loss;
    }
    return sc_.net.loss;
  }

  Links::Transmit transmit_from(SimNode& from) {
    return [this, &from](const std::string& to, const Frame& f) { transmit(from, to, f); };
  }

  void transmit(SimNode& from, const std::string& to, const Frame& f) {
    const bool data = f.seq != 0;
    if (data && f.retransmission) record(from.name, "retransmit", json{{"to", to}, {"seq", f.seq}});
    SimNode* dest = node(to);
    if (dest == nullptr) return;
    const char* dropped = nullptr;
    if (!dest->alive) {
      dropped = "crashed";
    } else if (cut(from.name, to)) {
      dropped = "partition";
    } else {
      const double loss = loss_between(from.name, to);
      if (loss > 0.0 && unit_(net_rng_) < loss) dropped = "loss";
    }
    if (dropped) {
      if (data) record(from.name, "drop", json{{"to", to}, {"seq", f.seq}, {"reason", dropped}});
      return;
    }
    Millis delay = std::uniform_int_distribution<Millis>(sc_.net.latency_min_ms, sc_.net.latency_max_ms)(net_rng_);
    if (sc_.net.reorder > 0.0 && unit_(net_rng_) < sc_.net.reorder) {
      delay += std::uniform_int_distribution<Millis>(0, sc_.net.reorder_extra_ms)(net_rng_);
    }
    at(now_ + delay, [this, from = from.name, to, f] { deliver(from, to, f); });
  }

  void deliver(const std::string& from, const std::string& to, const Frame& f) {
    SimNode* dest = node(to);
    if (dest == nullptr || !dest->alive) return;
    if (cut(from, to)) {
      if (f.seq != 0) record(from, "drop", json{{"to", to}, {"seq", f.seq}, {"reason", "partition"}});
      return;
    }
    if (dest == &reg_node_) {
      reg_node_.links->on_frame(
          from, f, now_, [this](const std::string& remote, const Body& b) { registry_receive(remote, b); },
          transmit_from(reg_node_));
      touch_registry();
      return;
    }
    auto* peer = static_cast<PeerNode*>(dest);
    if (from != kRegistryNode && peer->started) peer->engine->on_contact(ParticipantId::of(from), now_);
    peer->links->on_frame(
        from, f, now_,
        [this, peer](const std::string&, const Body& b) {
          if (!peer->alive) return;
          if (const auto* m = std::get_if<SessionMessage>(&b)) {
            peer->engine->on_message(*m, now_);
          } else {
            peer->engine->on_registry_response(std::get<json>(b), now_);
          }
        },
        transmit_from(*peer));
    touch(*peer);
  }

  void registry_receive(const std::string& from, const Body& b) {
    const auto* req = std::get_if<json>(&b);
    if (req == nullptr) return;
    json resp = registry_proto::handle(registry_, *req);
    record(kRegistryNode, "registry", json{{"from", from}, {"request", *req}, {"response", resp}});
    reg_node_.links->send(from, Body{std::move(resp)}, now_, transmit_from(reg_node_));
  }

  // ------------------------------------------------------------ timers

  void arm(SimNode& n, Millis wake, const std::function<void()>& fire) {
    if (!n.alive || wake == kNever) return;
    if (wake <= now_) wake = now_ + 1;
    if (wake == n.timer_at) return;
    n.timer_at = wake;
    const auto gen = ++n.timer_gen;
    at(wake, [this, &n, gen, fire] {
      if (gen != n.timer_gen || !n.alive) return;
      n.timer_at = kNever;
      fire();
    });
  }

  void touch(PeerNode& p) {
    if (!p.alive) return;
    const Millis wake = std::min(p.started ? p.engine->next_wakeup() : kNever, p.links->next_timer());
    arm(p, wake, [this, &p] {
      p.engine->tick(now_);
      p.links->on_timer(now_, transmit_from(p));
      touch(p);
    });
  }

  void touch_registry() {
    arm(reg_node_, reg_node_.links->next_timer(), [this] {
      reg_node_.links->on_timer(now_, transmit_from(reg_node_));
      touch_registry();
    });
  }

  // ------------------------------------------------------------ script

  void start(PeerNode& p) {
    if (!p.alive) return;
    if (p.spec.creates) {
      p.started = true;
      p.engine->create(sc_.course_id, now_);
    } else if (group_) {
      p.started = true;
      p.engine->join(*group_, now_);
    } else {
      if (now_ + kJoinRetryMs <= sc_.duration_ms) at(now_ + kJoinRetryMs, [this, &p] { start(p); });
      return;
    }
    touch(p);
  }

  PeerNode* current_leader() {
    PeerNode* best = nullptr;
    for (auto& p : peers_) {
      if (!p->alive || p->engine->phase() != PeerPhase::leading) continue;
      if (best == nullptr || p->engine->epoch() > best->engine->epoch()) best = p.get();
    }
    return best;
  }

  void exec(const ScriptStep& step) {
    PeerNode* p = step.peer == "@leader" ? current_leader() : peers_by_name_.at(step.peer);
    json rec{{"op", step.op}};
    if (!step.target_peer.empty()) rec["target"] = step.target_peer;
    if (step.op == "seek" || step.op == "slide") rec["target"] = step.target;
    if (!step.race.empty()) rec["race"] = step.race;
    if (p == nullptr) {
      rec["ok"] = false;
      rec["error"] = "no_leader";
      record(step.peer, "script", std::move(rec));
      return;
    }
    if (!p->alive || !p->started) {
      rec["ok"] = false;
      rec["error"] = p->alive ? "not_started" : "crashed";
      record(p->name, "script", std::move(rec));
      return;
    }
    auto& e = *p->engine;
    if (step.op == "crash") {
      p->alive = false;
      ++p->timer_gen;
      record(p->name, "crash",
             json{{"phase", to_string(e.phase())}, {"epoch", e.epoch().value}, {"join_seq", e.join_seq().value}});
      return;
    }
    UserCommand cmd{step.op, step.target, step.target_peer, step.text, step.flag};
    if (step.op == "set_active") rec["active"] = step.flag;
    auto r = run_command(e, cmd, now_);
    if (r) rec.update(*r);
    rec["ok"] = r.ok();
    if (!r) rec["error"] = to_string(r.code());
    record(p->name, "script", std::move(rec));
    touch(*p);
  }

  void schedule_policy(PeerNode& leader, const ParticipantId& requester) {
    if (sc_.policy.mode == LeaderPolicy::Mode::manual) return;
    if (sc_.policy.mode == LeaderPolicy::Mode::grant_first) {
      if (leader.decision_pending) return;
      leader.decision_pending = true;
    }
    const bool grant = sc_.policy.mode == LeaderPolicy::Mode::grant_first;
    at(now_ + sc_.policy.decide_after_ms, [this, &leader, requester, grant] {
      leader.decision_pending = false;
      auto& e = *leader.engine;
      if (!leader.alive || e.phase() != PeerPhase::leading || e.in_handoff()) return;
      const auto pending = e.pending_requests();
      if (pending.empty()) return;
      const auto target = grant ? pending.front() : requester;
      if (!grant && !e.pending_requests().empty() &&
          std::find(pending.begin(), pending.end(), requester) == pending.end()) {
        return;
      }
      auto r = e.decide(grant, target, now_);
      json rec{{"op", grant ? "grant" : "deny"}, {"target", target}, {"policy", true}, {"ok", r.ok()}};
      if (!r) rec["error"] = to_string(r.code());
      record(leader.name, "script", std::move(rec));
      touch(leader);
    });
  }

  void generate_traffic(const Traffic& t, std::uint64_t seed) {
    std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ULL + 7);
    std::uniform_int_distribution<Millis> when(t.from_ms, t.to_ms - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < t.events; ++i) {
      ScriptStep s;
      s.at_ms = when(rng);
      s.peer = "@leader";
      const double x = u(rng);
      if (x < t.jump_prob) {
        s.op = "slide";
        s.target = std::uniform_int_distribution<std::uint64_t>(0, sc_.manifest.slide_count - 1)(rng);
      } else if (x < t.jump_prob + 0.1) {
        s.op = u(rng) < 0.5 ? "pause" : "play";
      } else if (x < t.jump_prob + 0.15) {
        s.op = "seek";
        s.target = std::uniform_int_distribution<Millis>(0, sc_.manifest.duration_ms)(rng);
      } else {
        s.op = "next";
      }
      script_.push_back(s);
    }
    for (int i = 0; i < t.chats; ++i) {
      ScriptStep s;
      s.at_ms = when(rng);
      s.peer = sc_.peers[std::uniform_int_distribution<std::size_t>(0, sc_.peers.size() - 1)(rng)].name;
      s.op = "chat";
      s.text = "message " + std::to_string(i);
      script_.push_back(s);
    }
    std::stable_sort(script_.begin(), script_.end(),
                     [](const ScriptStep& a, const ScriptStep& b) { return a.at_ms < b.at_ms; });
  }

  // ------------------------------------------------------------ end

  void finish() {
    for (auto& p : peers_) {
      const auto& e = *p->engine;
      json transcript = json::array();
      for (const auto& c : e.transcript()) transcript.push_back(json{c.chat_seq, c.origin, c.client_id, c.text});
      json roster = json::array();
      for (const auto& r : e.roster()) roster.push_back(r.participant);
      json contacts = json::object();
      for (const auto& [who, t] : e.follower_contacts()) contacts[who.str()] = t;
      json f{{"alive", p->alive},
             {"started", p->started},
             {"phase", to_string(e.phase())},
             {"epoch", e.epoch().value},
             {"leader", e.leader()},
             {"join_seq", e.join_seq().value},
             {"state", e.state()},
             {"anchor", e.anchor()},
             {"offset", e.effective_offset(now_)},
             {"chat_next", e.chat_next()},
             {"transcript", std::move(transcript)},
             {"roster", std::move(roster)},
             {"leader_heard_at", e.leader_heard_at()},
             {"follower_contacts", std::move(contacts)},
             {"foreign_manifest", p->spec.foreign_manifest}};
      if (auto r = e.departure_reason()) f["departure"] = to_string(*r);
      record(p->name, "final", std::move(f));
    }
    json groups = json::array();
    for (const auto& g : registry_.all_groups()) groups.push_back(json(g));
    record(kRegistryNode, "registry_final", json{{"groups", std::move(groups)}});
  }

  const Scenario& sc_;
  std::uint64_t seed_;
  std::mt19937_64 net_rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  Millis now_ = 0;
  std::uint64_t order_ = 0;
  std::priority_queue<Item, std::vector<Item>, Later> queue_;

  Registry registry_;
  SimNode reg_node_;
  std::vector<std::unique_ptr<PeerNode>> peers_;
  std::map<std::string, PeerNode*> peers_by_name_;
  std::vector<ScriptStep> script_;
  std::optional<GroupId> group_;
  Trace trace_;
};

void PeerNode::send(const std::string& address, const SessionMessage& m) { sim->peer_send(*this, address, m); }
void PeerNode::registry_request(const json& request) { sim->peer_registry(*this, request); }
void PeerNode::log(LogEvent ev) { sim->peer_log(*this, std::move(ev)); }
void PeerNode::note(const PeerNote& n) { sim->peer_note(*this, n); }

}  // namespace

json to_json(const TraceRecord& r) {
  json j = r.data.is_object() ? r.data : json{{"data", r.data}};
  j["at"] = r.at;
  j["node"] = r.node;
  j["kind"] = r.kind;
  return j;
}

bool RunResult::passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const CheckVerdict& v) { return !v.applicable || v.pass; });
}

RunResult run(const Scenario& scenario, std::uint64_t seed) {
  RunResult out;
  out.trace = Simulation(scenario, seed).run();
  out.verdicts = evaluate(scenario, out.trace);
  return out;
}

}  // namespace climanic::sim
