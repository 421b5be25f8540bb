// Engine behavior on a lossless, zero-latency bus with an in-process
// registry. Timing-dependent paths (failover, handoff timeouts) advance the
// clock by hand.

#include <deque>
#include <map>
#include <memory>
#include <set>

#include <gtest/gtest.h>

#include "climanic/peer/command.hpp"
#include "climanic/peer/engine.hpp"
#include "climanic/registry/protocol.hpp"
#include "climanic/registry/registry.hpp"

namespace climanic {
namespace {

using nlohmann::json;

class Bus;

struct Node final : PeerEnv {
  Bus* bus = nullptr;
  std::string address;
  std::unique_ptr<PeerEngine> engine;
  std::vector<LogEvent> logged;
  std::vector<PeerNote> notes;
  bool down = false;

  void send(const std::string& to, const SessionMessage& m) override;
  void registry_request(const json& request) override;
  void log(LogEvent ev) override { logged.push_back(std::move(ev)); }
  void note(const PeerNote& n) override { notes.push_back(n); }
};

class Bus {
 public:
  Millis now = 1000;
  Registry registry{CourseCatalog({"bio101"}), [this] { return now; }, 7};
  CoursewareManifest manifest = uniform_manifest("bio101", "l1", 10, 600'000);

  Node& add(const std::string& name, std::optional<CoursewareManifest> m = std::nullopt) {
    auto n = std::make_unique<Node>();
    n->bus = this;
    n->address = name + ":1";
    PeerConfig cfg;
    cfg.self = ParticipantId::of(name);
    cfg.address = n->address;
    cfg.manifest = m.value_or(manifest);
    n->engine = std::make_unique<PeerEngine>(cfg, *n);
    auto& ref = *n;
    by_address_[n->address] = &ref;
    nodes_[name] = std::move(n);
    return ref;
  }

  Node& operator[](const std::string& name) { return *nodes_.at(name); }
  PeerEngine& eng(const std::string& name) { return *nodes_.at(name)->engine; }

  void post(std::function<void()> f) { queue_.push_back(std::move(f)); }

  void deliver(const std::string& to, const SessionMessage& m) {
    post([this, to, m] {
      auto it = by_address_.find(to);
      if (it == by_address_.end() || it->second->down) return;
      it->second->engine->on_contact(m.sender, now);
      it->second->engine->on_message(m, now);
    });
  }

  void settle() {
    for (int guard = 0; !queue_.empty() && guard < 100000; ++guard) {
      auto f = std::move(queue_.front());
      queue_.pop_front();
      f();
    }
  }

  /// Advances the clock in `step` increments, ticking every live engine.
  void advance(Millis ms, Millis step = 50) {
    for (Millis t = 0; t < ms; t += step) {
      now += step;
      for (auto& [_, n] : nodes_) {
        if (!n->down && n->engine->next_wakeup() <= now) n->engine->tick(now);
      }
      settle();
    }
  }

  GroupId start_group(std::vector<std::string> names) {
    eng(names[0]).create("bio101", now);
    settle();
    const auto g = eng(names[0]).group();
    for (std::size_t i = 1; i < names.size(); ++i) {
      eng(names[i]).join(g, now);
      settle();
    }
    advance(200);
    return g;
  }

 private:
  std::map<std::string, std::unique_ptr<Node>> nodes_;
  std::map<std::string, Node*> by_address_;
  std::deque<std::function<void()>> queue_;
};

void Node::send(const std::string& to, const SessionMessage& m) {
  if (down) return;
  bus->deliver(to, m);
}

void Node::registry_request(const json& request) {
  if (down) return;
  bus->post([this, request] {
    const auto resp = registry_proto::handle(bus->registry, request);
    bus->post([this, resp] {
      if (!down) engine->on_registry_response(resp, bus->now);
    });
  });
}

TEST(PeerEngine, CreatorLeadsAtEpochZero) {
  Bus bus;
  bus.add("alice");
  bus.start_group({"alice"});
  EXPECT_EQ(bus.eng("alice").phase(), PeerPhase::leading);
  EXPECT_EQ(bus.eng("alice").epoch().value, 0u);
  ASSERT_FALSE(bus["alice"].logged.empty());
  EXPECT_EQ(bus["alice"].logged.front().kind, LogKind::join);
}

TEST(PeerEngine, JoinersFollowAndConverge) {
  Bus bus;
  for (auto n : {"alice", "bob", "carol"}) bus.add(n);
  bus.start_group({"alice", "bob", "carol"});
  ASSERT_TRUE(bus.eng("alice").issue(EventKind::slide_change, 4, bus.now).ok());
  ASSERT_TRUE(bus.eng("alice").issue(EventKind::play, 0, bus.now).ok());
  bus.settle();
  for (auto n : {"bob", "carol"}) {
    EXPECT_EQ(bus.eng(n).phase(), PeerPhase::following) << n;
    EXPECT_EQ(bus.eng(n).leader(), ParticipantId::of("alice"));
    EXPECT_EQ(bus.eng(n).state(), bus.eng("alice").state()) << n;
  }
  EXPECT_EQ(bus.eng("carol").roster().size(), 3u);
}

TEST(PeerEngine, FollowerCannotIssue) {
  Bus bus;
  bus.add("alice");
  bus.add("bob");
  bus.start_group({"alice", "bob"});
  auto r = bus.eng("bob").issue(EventKind::play, 0, bus.now);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.code(), Errc::not_leader);
}

TEST(PeerEngine, ForeignManifestRefused) {
  Bus bus;
  bus.add("alice");
  bus.add("mallory", uniform_manifest("bio101", "l1", 11, 600'000));
  bus.start_group({"alice", "mallory"});
  bus.advance(3000);
  EXPECT_EQ(bus.eng("mallory").phase(), PeerPhase::departed);
  EXPECT_EQ(bus.eng("mallory").departure_reason(), Errc::manifest_mismatch);
}

TEST(PeerEngine, JoinInactiveGroupDeparts) {
  Bus bus;
  bus.add("alice");
  bus.add("bob");
  const auto g = bus.start_group({"alice"});
  ASSERT_TRUE(bus.eng("alice").set_active(false, bus.now).ok());
  bus.settle();
  bus.eng("bob").join(g, bus.now);
  bus.settle();
  EXPECT_EQ(bus.eng("bob").phase(), PeerPhase::departed);
  EXPECT_EQ(bus.eng("bob").departure_reason(), Errc::group_inactive);
}

TEST(PeerEngine, GrantMovesControlAndBumpsEpoch) {
  Bus bus;
  for (auto n : {"alice", "bob", "carol"}) bus.add(n);
  bus.start_group({"alice", "bob", "carol"});
  auto id = bus.eng("bob").request_control(bus.now);
  ASSERT_TRUE(id.ok());
  bus.settle();
  EXPECT_EQ(bus.eng("alice").pending_requests(), std::vector<ParticipantId>{ParticipantId::of("bob")});
  ASSERT_TRUE(bus.eng("alice").decide(true, ParticipantId::of("bob"), bus.now).ok());
  bus.advance(200);
  EXPECT_EQ(bus.eng("bob").phase(), PeerPhase::leading);
  EXPECT_EQ(bus.eng("alice").phase(), PeerPhase::following);
  EXPECT_EQ(bus.eng("carol").leader(), ParticipantId::of("bob"));
  for (auto n : {"alice", "bob", "carol"}) EXPECT_EQ(bus.eng(n).epoch().value, 1u) << n;
  EXPECT_EQ(bus.registry.get_members(bus.eng("bob").group())->controller, ParticipantId::of("bob"));
}

TEST(PeerEngine, OnlyOneOfTwoRequestersWins) {
  Bus bus;
  for (auto n : {"alice", "bob", "carol"}) bus.add(n);
  bus.start_group({"alice", "bob", "carol"});
  ASSERT_TRUE(bus.eng("bob").request_control(bus.now).ok());
  ASSERT_TRUE(bus.eng("carol").request_control(bus.now).ok());
  bus.settle();
  ASSERT_EQ(bus.eng("alice").pending_requests().size(), 2u);
  ASSERT_TRUE(bus.eng("alice").decide(true, ParticipantId::of("carol"), bus.now).ok());
  bus.advance(300);
  std::map<std::string, OutcomeKind> outcomes;
  for (auto n : {"bob", "carol"}) {
    for (const auto& note : bus[n].notes) {
      if (note.kind == PeerNote::Kind::outcome) outcomes[n] = note.outcome;
    }
  }
  EXPECT_EQ(outcomes.at("carol"), OutcomeKind::granted);
  EXPECT_EQ(outcomes.at("bob"), OutcomeKind::superseded);
  EXPECT_EQ(bus.eng("carol").phase(), PeerPhase::leading);
}

TEST(PeerEngine, LeaderMustTransferBeforeLeaving) {
  Bus bus;
  bus.add("alice");
  bus.add("bob");
  bus.start_group({"alice", "bob"});
  auto r = bus.eng("alice").leave(bus.now);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.code(), Errc::leader_must_transfer);
}

TEST(PeerEngine, TransferToUnknownTarget) {
  Bus bus;
  bus.add("alice");
  bus.add("bob");
  bus.start_group({"alice", "bob"});
  auto r = bus.eng("alice").transfer(ParticipantId::of("zed"), bus.now);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.code(), Errc::unknown_target);
}

TEST(PeerEngine, StaleEventIgnored) {
  Bus bus;
  bus.add("alice");
  bus.add("bob");
  bus.start_group({"alice", "bob"});
  ASSERT_TRUE(bus.eng("alice").issue(EventKind::slide_change, 3, bus.now).ok());
  bus.settle();
  const auto before = bus.eng("bob").state();
  // Replay an older event at bob by hand.
  SessionMessage m;
  m.type = MessageType::event;
  m.group_id = bus.eng("alice").group();
  m.epoch = bus.eng("alice").epoch();
  m.seq = 1;
  m.sender = ParticipantId::of("alice");
  PlaybackEvent ev;
  ev.kind = EventKind::slide_change;
  ev.target = 7;
  ev.issued_version = Version{ControlEpoch{0}, 0};
  ev.issuer = ParticipantId::of("alice");
  m.payload = EventPayload{ev};
  bus.eng("bob").on_message(m, bus.now);
  EXPECT_EQ(bus.eng("bob").state(), before);
}

TEST(PeerEngine, FailoverElectsEarliestSurvivor) {
  Bus bus;
  for (auto n : {"alice", "bob", "carol", "dave"}) bus.add(n);
  bus.start_group({"alice", "carol", "bob", "dave"});
  bus["alice"].down = true;
  bus.advance(5000);
  // carol joined second, so carol holds the lowest surviving join_seq.
  EXPECT_EQ(bus.eng("carol").phase(), PeerPhase::leading);
  for (auto n : {"bob", "carol", "dave"}) {
    EXPECT_EQ(bus.eng(n).epoch().value, 1u) << n;
    EXPECT_EQ(bus.eng(n).leader(), ParticipantId::of("carol")) << n;
  }
}

TEST(PeerEngine, ChatRelayedInOneOrder) {
  Bus bus;
  for (auto n : {"alice", "bob", "carol"}) bus.add(n);
  bus.start_group({"alice", "bob", "carol"});
  ASSERT_TRUE(bus.eng("bob").send_chat("first", bus.now).ok());
  ASSERT_TRUE(bus.eng("carol").send_chat("second", bus.now).ok());
  ASSERT_TRUE(bus.eng("alice").send_chat("third", bus.now).ok());
  bus.advance(200);
  const auto& ref = bus.eng("alice").transcript();
  ASSERT_EQ(ref.size(), 3u);
  for (auto n : {"bob", "carol"}) EXPECT_EQ(bus.eng(n).transcript(), ref) << n;
}

TEST(PeerEngine, OversizedChatRejected) {
  Bus bus;
  bus.add("alice");
  bus.start_group({"alice"});
  auto r = bus.eng("alice").send_chat(std::string(5000, 'x'), bus.now);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.code(), Errc::message_too_large);
}

TEST(UserCommands, ParseAndRun) {
  Bus bus;
  bus.add("alice");
  bus.start_group({"alice"});
  auto c = parse_command(json{{"op", "slide"}, {"target", 2}});
  ASSERT_TRUE(c.ok());
  ASSERT_TRUE(run_command(bus.eng("alice"), *c, bus.now).ok());
  auto next = run_command(bus.eng("alice"), *parse_command(json{{"op", "next"}}), bus.now);
  ASSERT_TRUE(next.ok());
  EXPECT_EQ(next->at("target"), 3);
  EXPECT_EQ(bus.eng("alice").state().slide_index, 3u);

  EXPECT_EQ(parse_command(json{{"op", "dance"}}).code(), Errc::invalid_argument);
  EXPECT_EQ(parse_command(json{{"op", "grant"}}).code(), Errc::invalid_argument);
  EXPECT_EQ(parse_command(json{{"op", "seek"}}).code(), Errc::invalid_argument);
  EXPECT_EQ(parse_command(json{{"op", "chat"}, {"text", 3}}).code(), Errc::invalid_argument);
}

}  // namespace
}  // namespace climanic
