// Real sockets on loopback: registry server, live peers, UI gateway.

#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <gtest/gtest.h>

#include "climanic/codec.hpp"
#include "climanic/log/log.hpp"
#include "climanic/log/replay.hpp"
#include "climanic/net/gateway.hpp"
#include "climanic/net/live.hpp"
#include "climanic/net/registry_server.hpp"
#include "climanic/registry/protocol.hpp"
#include "climanic/registry/store.hpp"

namespace climanic::net {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("climanic-live-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

CoursewareManifest sample_manifest() {
  auto m = load_manifest(fs::path(CLIMANIC_SOURCE_DIR) / "samples/manifests/bio101-lecture3.json");
  EXPECT_TRUE(m.ok());
  return *m;
}

struct RegistryFixture {
  Registry registry{CourseCatalog({"bio101"}), wall_ms, 99};
  RegistryServer server{registry};
  Endpoint ep;
  RegistryFixture() {
    auto port = server.start(Endpoint{"127.0.0.1", 0});
    EXPECT_TRUE(port.ok());
    ep = Endpoint{"127.0.0.1", *port};
  }
};

std::unique_ptr<LiveHost> make_peer(const std::string& name, const Endpoint& registry, const std::string& log = "") {
  LiveOptions o;
  o.peer.self = ParticipantId::of(name);
  o.peer.manifest = sample_manifest();
  o.listen = Endpoint{"127.0.0.1", 0};
  o.registry = registry;
  o.log_path = log;
  auto h = LiveHost::create(std::move(o));
  EXPECT_TRUE(h.ok()) << (h ? "" : h.error().message);
  return std::move(*h);
}

/// Polls until `pred(state)` holds or the deadline passes.
template <typename Pred>
bool wait_for(LiveHost& h, Pred pred, int ms = 5000) {
  const auto end = std::chrono::steady_clock::now() + std::chrono::milliseconds(ms);
  while (std::chrono::steady_clock::now() < end) {
    if (pred(h.state())) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return false;
}

TEST(Tcp, ParseEndpoint) {
  auto e = parse_endpoint("10.1.2.3:7400");
  ASSERT_TRUE(e.ok());
  EXPECT_EQ(e->host, "10.1.2.3");
  EXPECT_EQ(e->port, 7400);
  EXPECT_EQ(parse_endpoint(":80")->host, "127.0.0.1");
  EXPECT_FALSE(parse_endpoint("nohost").ok());
  EXPECT_FALSE(parse_endpoint("h:99999").ok());
  EXPECT_FALSE(parse_endpoint("h:12x").ok());
}

TEST(Tcp, BindFailureOnTakenPort) {
  auto a = listen_on(Endpoint{"127.0.0.1", 0});
  ASSERT_TRUE(a.ok());
  auto b = listen_on(Endpoint{"127.0.0.1", bound_port(a->get())});
  ASSERT_FALSE(b.ok());
  EXPECT_EQ(b.code(), Errc::bind_failure);
}

TEST(RegistryServerTest, CreateListJoinOverTcp) {
  RegistryFixture f;
  auto c = RegistryClient::connect(f.ep);
  ASSERT_TRUE(c.ok());
  auto created = registry_proto::as_group(*c->call(registry_proto::create_group(1, "bio101", ParticipantId::of("a"), "h:1")));
  ASSERT_TRUE(created.ok());
  auto listed = registry_proto::as_groups(*c->call(registry_proto::list_active_groups(2, "bio101")));
  ASSERT_TRUE(listed.ok());
  ASSERT_EQ(listed->size(), 1u);
  EXPECT_EQ(listed->front().group_id, created->group_id);
  auto bad = c->call(registry_proto::create_group(3, "nope", ParticipantId::of("b"), "h:2"));
  ASSERT_TRUE(bad.ok());
  EXPECT_EQ(registry_proto::unwrap(*bad).code(), Errc::unknown_course);
  auto junk = c->call(json{{"type", "teleport"}});
  ASSERT_TRUE(junk.ok());
  EXPECT_EQ(junk->at("ok"), false);
}

TEST(RegistryServerTest, RestartRestoresState) {
  const auto dir = temp_dir("restart");
  GroupId gid;
  std::string before;
  {
    Registry reg(CourseCatalog({"bio101"}), wall_ms, 1);
    auto store = RegistryStore::open(dir.string(), reg);
    ASSERT_TRUE(store.ok());
    RegistryServer server(reg);
    auto port = server.start(Endpoint{"127.0.0.1", 0});
    ASSERT_TRUE(port.ok());
    auto c = RegistryClient::connect(Endpoint{"127.0.0.1", *port});
    ASSERT_TRUE(c.ok());
    auto g = registry_proto::as_group(*c->call(registry_proto::create_group(1, "bio101", ParticipantId::of("a"), "h:1")));
    ASSERT_TRUE(g.ok());
    gid = g->group_id;
    ASSERT_TRUE(registry_proto::as_join(*c->call(registry_proto::join_group(2, gid, ParticipantId::of("b"), "h:2"))).ok());
    ASSERT_TRUE(registry_proto::as_epoch(
                    *c->call(registry_proto::claim_leadership(3, gid, ParticipantId::of("b"), ControlEpoch{0})))
                    .ok());
    before = registry_snapshot_text(reg.all_groups());
    server.stop();
  }
  Registry reg(CourseCatalog({"bio101"}), wall_ms, 2);
  auto store = RegistryStore::open(dir.string(), reg);
  ASSERT_TRUE(store.ok());
  EXPECT_EQ(registry_snapshot_text(reg.all_groups()), before);
  RegistryServer server(reg);
  auto port = server.start(Endpoint{"127.0.0.1", 0});
  ASSERT_TRUE(port.ok());
  auto c = RegistryClient::connect(Endpoint{"127.0.0.1", *port});
  auto members = registry_proto::as_members(*c->call(registry_proto::get_members(1, gid)));
  ASSERT_TRUE(members.ok());
  EXPECT_EQ(members->controller, ParticipantId::of("b"));
  EXPECT_EQ(members->controller_epoch.value, 1u);
}

TEST(Headless, ScriptParsing) {
  auto s = parse_headless_script(json{{"duration_ms", 100},
                                      {"script", json::array({json{{"at", 500}, {"peer", "a"}, {"op", "play"}},
                                                              json{{"at", 50}, {"peer", "b"}, {"op", "pause"}}})}});
  ASSERT_TRUE(s.ok());
  EXPECT_EQ(s->duration_ms, 500u);
  EXPECT_EQ(s->steps.front().op, "pause");
  EXPECT_FALSE(parse_headless_script(json::array({json{{"at", 1}, {"peer", "a"}, {"op", "crash"}}})).ok());
  EXPECT_FALSE(parse_headless_script(json{{"steps", 1}}).ok());
  EXPECT_FALSE(parse_headless_script(json::array({json{{"peer", "a"}, {"op", "play"}}})).ok());
}

// Three headless peers run the bundled demo script over loopback.
TEST(LiveLoopback, ThreePeerDemoConverges) {
  RegistryFixture f;
  const auto dir = temp_dir("demo");
  auto script = load_headless_script((fs::path(CLIMANIC_SOURCE_DIR) / "samples/demo-3peers.json").string());
  ASSERT_TRUE(script.ok());

  std::map<std::string, std::unique_ptr<LiveHost>> peers;
  for (auto n : {"alice", "bob", "carol"}) peers[n] = make_peer(n, f.ep, (dir / (std::string(n) + ".log")).string());
  for (auto& [_, p] : peers) p->start();

  peers["alice"]->create_group("bio101");
  ASSERT_TRUE(wait_for(*peers["alice"], [](const json& s) { return s.at("phase") == "leading"; }));
  const auto gid = GroupId::parse(peers["alice"]->state().at("group_id").get<std::string>());
  ASSERT_TRUE(gid.ok());
  for (auto n : {"bob", "carol"}) {
    peers[n]->join_group(*gid);
    ASSERT_TRUE(wait_for(*peers[n], [](const json& s) { return s.at("phase") == "following"; })) << n;
  }
  for (auto& [_, p] : peers) p->run_script(*script);
  std::this_thread::sleep_for(std::chrono::milliseconds(script->duration_ms + 1500));
  for (auto& [_, p] : peers) p->stop();

  const json ref = peers["bob"]->state();
  EXPECT_EQ(ref.at("phase"), "leading");
  EXPECT_EQ(ref.at("epoch"), 1);
  EXPECT_EQ(ref.at("state").at("slide_index"), 4);
  EXPECT_EQ(ref.at("state").at("playing"), false);
  EXPECT_EQ(ref.at("chat").size(), 1u);
  for (auto n : {"alice", "carol"}) {
    const json s = peers[n]->state();
    EXPECT_EQ(s.at("phase"), "following") << n;
    EXPECT_EQ(s.at("leader"), "bob") << n;
    EXPECT_EQ(s.at("state"), ref.at("state")) << n;
    EXPECT_EQ(s.at("chat"), ref.at("chat")) << n;
    EXPECT_EQ(s.at("roster"), ref.at("roster")) << n;
  }
  // Each peer's log replays to its live state.
  for (auto& [n, p] : peers) {
    auto log = read_log((dir / (n + ".log")).string());
    ASSERT_TRUE(log.ok()) << n;
    auto r = replay(log->events, sample_manifest());
    ASSERT_TRUE(r.ok()) << n;
    EXPECT_EQ(json(r->state), p->state().at("state")) << n;
  }
}

TEST(LiveLoopback, JoinInactiveGroupFails) {
  RegistryFixture f;
  auto alice = make_peer("alice", f.ep);
  auto bob = make_peer("bob", f.ep);
  alice->start();
  bob->start();
  alice->create_group("bio101");
  ASSERT_TRUE(wait_for(*alice, [](const json& s) { return s.at("phase") == "leading"; }));
  UserCommand off{"set_active", 0, "", "", false};
  ASSERT_TRUE(alice->command(off).ok());
  const auto gid = GroupId::parse(alice->state().at("group_id").get<std::string>());
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  bob->join_group(*gid);
  ASSERT_TRUE(wait_for(*bob, [](const json& s) { return s.at("phase") == "departed"; }));
  EXPECT_EQ(bob->state().at("departure"), "group_inactive");
}

TEST(LiveLoopback, CrashedLeaderReplaced) {
  RegistryFixture f;
  std::map<std::string, std::unique_ptr<LiveHost>> peers;
  for (auto n : {"alice", "bob", "carol"}) peers[n] = make_peer(n, f.ep);
  for (auto& [_, p] : peers) p->start();
  peers["alice"]->create_group("bio101");
  ASSERT_TRUE(wait_for(*peers["alice"], [](const json& s) { return s.at("phase") == "leading"; }));
  const auto gid = *GroupId::parse(peers["alice"]->state().at("group_id").get<std::string>());
  for (auto n : {"bob", "carol"}) {
    peers[n]->join_group(gid);
    ASSERT_TRUE(wait_for(*peers[n], [](const json& s) { return s.at("phase") == "following"; })) << n;
  }
  ASSERT_TRUE(peers["alice"]->command(UserCommand{"slide", 5, "", "", false}).ok());
  ASSERT_TRUE(wait_for(*peers["carol"], [](const json& s) { return s.at("state").at("slide_index") == 5; }));
  peers["alice"].reset();  // stops the loop and closes its sockets
  ASSERT_TRUE(wait_for(*peers["bob"], [](const json& s) { return s.at("phase") == "leading"; }, 8000));
  ASSERT_TRUE(wait_for(*peers["carol"], [](const json& s) { return s.at("leader") == "bob" && s.at("epoch") == 1; }));
  EXPECT_EQ(peers["carol"]->state().at("state").at("slide_index"), 5);
}

TEST(GatewayTest, StateCommandsAndEvents) {
  RegistryFixture f;
  auto alice = make_peer("alice", f.ep);
  alice->start();
  alice->create_group("bio101");
  ASSERT_TRUE(wait_for(*alice, [](const json& s) { return s.at("phase") == "leading"; }));

  Gateway gw(*alice);
  auto port = gw.start(Endpoint{"127.0.0.1", 0});
  ASSERT_TRUE(port.ok());
  httplib::Client cli("127.0.0.1", *port);
  cli.set_read_timeout(5, 0);

  auto st = cli.Get("/state");
  ASSERT_TRUE(st);
  EXPECT_EQ(st->status, 200);
  EXPECT_EQ(json::parse(st->body).at("phase"), "leading");

  auto ok = cli.Post("/command", R"({"op":"slide","target":2})", "application/json");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  EXPECT_EQ(json::parse(ok->body).at("ok"), true);
  EXPECT_EQ(alice->state().at("state").at("slide_index"), 2);

  auto bad = cli.Post("/command", R"({"op":"slide","target":99})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body).at("error").at("code"), "out_of_bounds");

  auto unknown = cli.Post("/command", R"({"op":"transfer","target":"zed"})", "application/json");
  ASSERT_TRUE(unknown);
  EXPECT_EQ(json::parse(unknown->body).at("error").at("code"), "unknown_target");

  auto garbage = cli.Post("/command", "{not json", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);

  // A fresh attach gets the full view first, then changes.
  std::string stream;
  std::thread poke([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    (void)alice->command(UserCommand{"play", 0, "", "", false});
  });
  httplib::Client sse("127.0.0.1", *port);
  sse.set_read_timeout(5, 0);
  sse.Get("/events", [&](const char* data, std::size_t len) {
    stream.append(data, len);
    return stream.find("\"playing\":true") == std::string::npos;
  });
  poke.join();
  const auto first = stream.find("event: state\ndata: ");
  ASSERT_NE(first, std::string::npos) << stream;
  const auto line_end = stream.find('\n', first + 19);
  const auto view = json::parse(stream.substr(first + 19, line_end - first - 19));
  EXPECT_EQ(view.at("state").at("slide_index"), 2);
  EXPECT_NE(stream.find("\"playing\":true"), std::string::npos);
  gw.stop();
}

}  // namespace
}  // namespace climanic::net
