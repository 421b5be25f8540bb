#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "climanic/codec.hpp"
#include "climanic/wire.hpp"

namespace climanic {
namespace {

namespace fs = std::filesystem;

const GroupId kGroup = *GroupId::parse("00112233445566778899aabbccddeeff");

SyncSnapshot sample_snapshot() {
  SyncSnapshot s;
  s.state = PlaybackState{2, 125000, true, Version{ControlEpoch{3}, 17}};
  s.anchor_time = 1700000000000;
  s.leader = ParticipantId::of("alice");
  s.leader_epoch = ControlEpoch{3};
  s.reason = TransferReason::grant;
  s.roster = {{ParticipantId::of("alice"), JoinSeq{0}, "127.0.0.1:7001"},
              {ParticipantId::of("bob"), JoinSeq{1}, "127.0.0.1:7002"}};
  s.chat_next = 4;
  s.resolved = {{ParticipantId::of("bob"), 2, OutcomeKind::denied}};
  return s;
}

SessionMessage msg(MessageType type, Payload p) {
  return SessionMessage{type, kGroup, ControlEpoch{3}, 42, ParticipantId::of("alice"), std::move(p)};
}

std::vector<SessionMessage> samples() {
  PlaybackEvent ev;
  ev.kind = EventKind::slide_change;
  ev.target = 3;
  ev.position_ms = 130000;
  ev.issued_version = Version{ControlEpoch{3}, 18};
  ev.issuer = ParticipantId::of("alice");
  ev.issued_at = 1700000005000;
  return {
      msg(MessageType::hello, HelloPayload{std::string(64, 'a'), JoinSeq{1}, "127.0.0.1:7002"}),
      msg(MessageType::snapshot_request, SnapshotRequestPayload{}),
      msg(MessageType::sync_snapshot, sample_snapshot()),
      msg(MessageType::event, EventPayload{ev}),
      msg(MessageType::control_request, ControlRequestPayload{7}),
      msg(MessageType::control_granted, ControlOutcomePayload{ParticipantId::of("bob"), 7, sample_snapshot()}),
      msg(MessageType::control_denied, ControlOutcomePayload{ParticipantId::of("bob"), 7, std::nullopt}),
      msg(MessageType::control_superseded, ControlOutcomePayload{ParticipantId::of("carol"), 1, std::nullopt}),
      msg(MessageType::control_transfer,
          ControlTransferPayload{ParticipantId::of("bob"), ControlEpoch{4}, TransferReason::failover,
                                 "127.0.0.1:7002", sample_snapshot()}),
      msg(MessageType::heartbeat, HeartbeatPayload{HeartbeatRole::leader, 2, sample_snapshot().roster}),
      msg(MessageType::chat, ChatPayload{ParticipantId::of("bob"), 5, 11, "slide 3 question"}),
      msg(MessageType::goodbye, GoodbyePayload{"leave"}),
  };
}

fs::path golden_dir() { return fs::path(CLIMANIC_SOURCE_DIR) / "tests" / "wire"; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Wire, RoundTripEveryType) {
  for (const auto& m : samples()) {
    auto text = encode_message(m);
    auto back = decode_message(text);
    ASSERT_TRUE(back.ok()) << text << " " << back.error().message;
    EXPECT_EQ(*back, m) << to_string(m.type);
    EXPECT_TRUE(payload_matches(m.type, back->payload));
  }
}

// Golden bodies in tests/wire/<type>.json. Set CLIMANIC_REGEN_GOLDEN=1 to
// rewrite them after an intentional format change.
TEST(Wire, GoldenBodies) {
  const bool regen = std::getenv("CLIMANIC_REGEN_GOLDEN") != nullptr;
  for (const auto& m : samples()) {
    auto path = golden_dir() / (std::string(to_string(m.type)) + ".json");
    auto text = encode_message(m);
    if (regen) {
      std::ofstream(path, std::ios::binary) << text << '\n';
      continue;
    }
    ASSERT_TRUE(fs::exists(path)) << path;
    auto golden = read_file(path);
    ASSERT_FALSE(golden.empty());
    if (golden.back() == '\n') golden.pop_back();
    EXPECT_EQ(text, golden) << path;
    auto parsed = decode_message(golden);
    ASSERT_TRUE(parsed.ok());
    EXPECT_EQ(*parsed, m);
  }
}

TEST(Wire, CanonicalKeysAreSorted) {
  auto text = encode_message(samples()[4]);
  EXPECT_EQ(text,
            R"({"epoch":3,"group_id":"00112233445566778899aabbccddeeff","payload":{"request_id":7},)"
            R"("sender":"alice","seq":42,"type":"control_request"})");
}

TEST(Wire, EveryMessageUnderOneKiB) {
  // Snapshots with a handful of roster entries must fit the per-message
  // budget; heartbeats without a roster are far smaller.
  for (const auto& m : samples()) EXPECT_LT(frame(encode_message(m)).size(), 1024u) << to_string(m.type);
}

TEST(Wire, RejectsMalformed) {
  EXPECT_EQ(decode_message("not json").code(), Errc::protocol_error);
  EXPECT_EQ(decode_message("[]").code(), Errc::protocol_error);
  auto j = message_to_json(samples()[0]);
  j["type"] = "teleport";
  EXPECT_EQ(message_from_json(j).code(), Errc::protocol_error);
  j = message_to_json(samples()[0]);
  j["payload"].erase("join_seq");
  EXPECT_EQ(message_from_json(j).code(), Errc::protocol_error);
  j = message_to_json(samples()[0]);
  j["sender"] = "";
  EXPECT_EQ(message_from_json(j).code(), Errc::protocol_error);
  j = message_to_json(samples()[0]);
  j["group_id"] = "xyz";
  EXPECT_EQ(message_from_json(j).code(), Errc::protocol_error);
  j = message_to_json(samples()[9]);
  j["payload"]["role"] = "observer";
  EXPECT_EQ(message_from_json(j).code(), Errc::protocol_error);
}

TEST(Framing, BigEndianPrefix) {
  auto f = frame("{}");
  ASSERT_EQ(f.size(), 6u);
  EXPECT_EQ(f, std::string("\x00\x00\x00\x02{}", 6));
  auto big = frame(std::string(0x010203, 'x'));
  EXPECT_EQ(static_cast<unsigned char>(big[0]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(big[1]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(big[2]), 0x02);
  EXPECT_EQ(static_cast<unsigned char>(big[3]), 0x03);
}

TEST(Framing, DecoderHandlesArbitrarySplits) {
  std::string stream;
  std::vector<std::string> bodies;
  for (const auto& m : samples()) {
    bodies.push_back(encode_message(m));
    stream += frame(bodies.back());
  }
  for (std::size_t chunk : {1u, 3u, 7u, 64u, 100000u}) {
    FrameDecoder d;
    std::vector<std::string> got;
    for (std::size_t i = 0; i < stream.size(); i += chunk) {
      ASSERT_TRUE(d.feed(std::string_view(stream).substr(i, chunk)).ok());
      while (auto f = d.next()) got.push_back(*f);
    }
    EXPECT_EQ(got, bodies) << "chunk " << chunk;
    EXPECT_EQ(d.buffered(), 0u);
  }
}

TEST(Framing, OversizeHeaderRejected) {
  FrameDecoder d;
  EXPECT_EQ(d.feed(std::string("\x00\x10\x00\x01", 4)).code(), Errc::protocol_error);
  EXPECT_THROW(frame(std::string(kMaxFrameBytes + 1, 'x')), std::length_error);
  FrameDecoder ok;
  EXPECT_TRUE(ok.feed(std::string("\x00\x10\x00\x00", 4)).ok());
}

}  // namespace
}  // namespace climanic
