#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "climanic/codec.hpp"
#include "climanic/log/log.hpp"
#include "climanic/log/replay.hpp"

namespace climanic {
namespace {

namespace fs = std::filesystem;

const GroupId kGroup = *GroupId::parse("0f0e0d0c0b0a09080706050403020100");

LogEvent rec(LogKind kind, Millis at, nlohmann::json detail = nlohmann::json::object(), std::uint64_t epoch = 0,
             const char* actor = "A") {
  LogEvent e;
  e.at = at;
  e.group_id = kGroup;
  e.actor = ParticipantId::of(actor);
  e.kind = kind;
  e.epoch = ControlEpoch{epoch};
  e.detail = std::move(detail);
  return e;
}

LogEvent playback(EventKind kind, std::uint64_t seq, std::uint64_t target, Millis position = 0,
                  std::uint64_t epoch = 0) {
  PlaybackEvent ev;
  ev.kind = kind;
  ev.target = target;
  ev.position_ms = position;
  ev.issued_version = Version{ControlEpoch{epoch}, seq};
  ev.issuer = ParticipantId::of("A");
  LogKind k = kind == EventKind::play    ? LogKind::play
              : kind == EventKind::pause ? LogKind::pause
              : kind == EventKind::seek  ? LogKind::seek
                                         : LogKind::slide_change;
  return rec(k, 100 + seq, {{"event", ev}}, epoch);
}

std::vector<LogEvent> numbered(std::vector<LogEvent> v) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i].seq = i;
  return v;
}

fs::path temp_file(const std::string& name) {
  auto p = fs::temp_directory_path() / ("climanic-log-" + name + "-" + std::to_string(::getpid()) + ".log");
  fs::remove(p);
  return p;
}

TEST(LogFormat, LineRoundTrip) {
  auto e = rec(LogKind::join, 5, {{"join_seq", 0}});
  auto line = encode_log_line(e);
  EXPECT_EQ(line[8], ' ');
  EXPECT_EQ(line.back(), '\n');
  auto parsed = parse_log(line);
  ASSERT_TRUE(parsed.ok());
  ASSERT_EQ(parsed->events.size(), 1u);
  EXPECT_EQ(parsed->events[0], e);
  EXPECT_FALSE(parsed->torn_tail);
}

TEST(LogFormat, KnownChecksum) {
  // crc32("{}") is 0xe6ed8c6c... computed independently of zlib by the
  // bitwise definition below.
  auto crc_bitwise = [](std::string_view s) {
    std::uint32_t c = 0xffffffffu;
    for (unsigned char ch : s) {
      c ^= ch;
      for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
    }
    return c ^ 0xffffffffu;
  };
  auto e = rec(LogKind::chat, 9, {{"origin", "A"}, {"text", "hi"}});
  auto line = encode_log_line(e);
  auto body = line.substr(9, line.size() - 10);
  char want[9];
  std::snprintf(want, sizeof want, "%08x", crc_bitwise(body));
  EXPECT_EQ(line.substr(0, 8), want);
}

TEST(LogWriterTest, AppendReadBack) {
  auto path = temp_file("rt");
  {
    auto w = LogWriter::open(path.string(), {});
    ASSERT_TRUE(w.ok());
    ASSERT_TRUE((*w)->append(rec(LogKind::join, 1)).ok());
  }
  auto c = read_log(path.string());
  ASSERT_TRUE(c.ok());
  ASSERT_EQ(c->events.size(), 1u);
  auto want = rec(LogKind::join, 1);
  EXPECT_EQ(c->events[0], want);
  fs::remove(path);
}

TEST(LogWriterTest, OffsetsStrictlyIncrease) {
  auto path = temp_file("offsets");
  auto w = LogWriter::open(path.string(), {});
  ASSERT_TRUE(w.ok());
  std::uint64_t prev = 0;
  for (int i = 0; i < 10000; ++i) {
    auto off = (*w)->append(rec(LogKind::chat, static_cast<Millis>(i), {{"origin", "A"}}));
    ASSERT_TRUE(off.ok());
    if (i > 0) ASSERT_GT(*off, prev);
    prev = *off;
  }
  ASSERT_TRUE((*w)->flush().ok());
  auto c = read_log(path.string());
  ASSERT_EQ(c->events.size(), 10000u);
  EXPECT_EQ(c->events.back().seq, 9999u);
  fs::remove(path);
}

TEST(LogWriterTest, FlushByCountAndInterval) {
  auto path = temp_file("flush");
  LogWriter::Options o;
  o.flush_every = 3;
  o.flush_interval_ms = 500;
  auto w = LogWriter::open(path.string(), o);
  (*w)->append(rec(LogKind::join, 0));
  (*w)->append(rec(LogKind::join, 10));
  EXPECT_EQ(read_log(path.string())->events.size(), 0u);
  (*w)->append(rec(LogKind::join, 20));
  EXPECT_EQ(read_log(path.string())->events.size(), 3u);
  (*w)->append(rec(LogKind::join, 30));
  ASSERT_TRUE((*w)->tick(529).ok());
  EXPECT_EQ(read_log(path.string())->events.size(), 3u);
  ASSERT_TRUE((*w)->tick(530).ok());
  EXPECT_EQ(read_log(path.string())->events.size(), 4u);
  fs::remove(path);
}

TEST(LogWriterTest, StorageFull) {
  if (!fs::exists("/dev/full")) GTEST_SKIP() << "/dev/full not available";
  auto w = LogWriter::open("/dev/full", {});
  ASSERT_TRUE(w.ok());
  ASSERT_TRUE((*w)->append(rec(LogKind::join, 0)).ok());
  EXPECT_EQ((*w)->flush().code(), Errc::storage_full);
}

TEST(LogReader, CorruptionInTheMiddle) {
  std::string text = encode_log_line(rec(LogKind::join, 0)) + encode_log_line(rec(LogKind::join, 1));
  text[12] ^= 0x01;
  EXPECT_EQ(parse_log(text).code(), Errc::corrupt_log);
}

TEST(LogReader, DamagedLastLineIsTornTail) {
  auto good = encode_log_line(rec(LogKind::join, 0));
  auto last = encode_log_line(rec(LogKind::join, 1));
  for (std::size_t cut = 1; cut < last.size(); ++cut) {
    auto parsed = parse_log(good + last.substr(0, cut));
    ASSERT_TRUE(parsed.ok()) << cut;
    EXPECT_EQ(parsed->events.size(), 1u);
    EXPECT_EQ(parsed->valid_bytes, good.size());
    EXPECT_TRUE(parsed->torn_tail);
  }
}

// Child appends with periodic flushes, tears its last write in half, and is
// killed. Reopening keeps everything up to the last flush and continues the
// numbering.
TEST(LogWriterTest, KillAndReopen) {
  auto path = temp_file("kill");
  pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    LogWriter::Options o;
    o.flush_every = 10;
    auto w = LogWriter::open(path.string(), o);
    if (!w) ::_exit(3);
    for (int i = 0; i < 57; ++i) (*w)->append(rec(LogKind::chat, static_cast<Millis>(i), {{"origin", "A"}}));
    auto torn = encode_log_line(rec(LogKind::chat, 999, {{"origin", "A"}}));
    std::ofstream(path, std::ios::app) << torn.substr(0, torn.size() / 2);
    ::kill(::getpid(), SIGKILL);
    ::_exit(4);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFSIGNALED(status));
  auto before = read_log(path.string());
  ASSERT_TRUE(before.ok());
  EXPECT_EQ(before->events.size(), 50u);
  EXPECT_TRUE(before->torn_tail);
  {
    auto w = LogWriter::open(path.string(), {});
    ASSERT_TRUE(w.ok());
    EXPECT_EQ((*w)->next_seq(), 50u);
    (*w)->append(rec(LogKind::leave, 2000));
  }
  auto after = read_log(path.string());
  ASSERT_TRUE(after.ok());
  EXPECT_FALSE(after->torn_tail);
  ASSERT_EQ(after->events.size(), 51u);
  for (std::size_t i = 0; i < after->events.size(); ++i) EXPECT_EQ(after->events[i].seq, i);
  fs::remove(path);
}

// ── replay / summarize ──────────────────────────────────────────────────────

CoursewareManifest ten_slides() { return uniform_manifest("casa101", "l1", 10, 600000); }

TEST(Replay, EmptyLogIsInitialState) {
  auto r = replay({}, ten_slides());
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r->state.slide_index, 0u);
  EXPECT_EQ(r->state.media_offset_ms, 0u);
  EXPECT_FALSE(r->state.playing);
}

TEST(Replay, GapDetected) {
  auto log = numbered({rec(LogKind::join, 0), rec(LogKind::join, 1), rec(LogKind::join, 2)});
  log.erase(log.begin() + 1);
  EXPECT_EQ(replay(log, ten_slides()).code(), Errc::gap_detected);
}

TEST(Replay, ReappliesEvents) {
  auto m = ten_slides();
  auto log = numbered({rec(LogKind::join, 0), playback(EventKind::play, 0, 0, 0),
                       playback(EventKind::slide_change, 1, 3), playback(EventKind::pause, 2, 0, 200000)});
  auto r = replay(log, m);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r->state.slide_index, 3u);
  EXPECT_EQ(r->state.media_offset_ms, 200000u);
  EXPECT_FALSE(r->state.playing);
  EXPECT_EQ(r->state.version, (Version{ControlEpoch{0}, 2}));
}

TEST(Replay, StateRecordResets) {
  auto m = ten_slides();
  PlaybackState installed{7, 430000, false, Version{ControlEpoch{2}, 5}};
  auto log = numbered({rec(LogKind::join, 0, {{"state", installed}}, 2)});
  EXPECT_EQ(replay(log, m)->state, installed);
}

std::vector<LogEvent> slide_walk(std::initializer_list<std::uint64_t> targets) {
  std::vector<LogEvent> v{rec(LogKind::join, 0)};
  std::uint64_t seq = 0;
  for (auto t : targets) v.push_back(playback(EventKind::slide_change, seq++, t));
  return numbered(v);
}

TEST(Summarize, SequentialWalk) {
  auto r = replay(slide_walk({1, 2, 3}), ten_slides());
  EXPECT_EQ(r->summary.slide_changes, 3u);
  EXPECT_DOUBLE_EQ(r->summary.non_sequential_fraction(), 0.0);
}

TEST(Summarize, JumpingWalk) {
  // Slides visited 0,5,2: both transitions are non-unit.
  auto r = replay(slide_walk({5, 2}), ten_slides());
  EXPECT_EQ(r->summary.slide_changes, 2u);
  EXPECT_DOUBLE_EQ(r->summary.non_sequential_fraction(), 1.0);
}

TEST(Summarize, TransferTalliesAgree) {
  PlaybackState s;
  auto log = numbered({
      rec(LogKind::join, 0, {{"state", s}}, 0),
      rec(LogKind::control_request, 1, {{"request_id", 1}}, 0, "B"),
      rec(LogKind::control_grant, 2, {{"status", "committed"}, {"state", s}}, 1, "B"),
      rec(LogKind::failover_claim, 3, {{"result", "conflict"}}, 1, "C"),
      rec(LogKind::failover_claim, 4, {{"result", "won"}, {"state", s}}, 2, "C"),
      rec(LogKind::control_grant, 5, {{"status", "committed"}, {"state", s}}, 3, "A"),
      rec(LogKind::chat, 6, {{"origin", "B"}}, 3, "B"),
      rec(LogKind::chat, 7, {{"origin", "B"}}, 3, "B"),
      rec(LogKind::chat, 8, {{"origin", "C"}}, 3, "C"),
  });
  auto r = replay(log, ten_slides());
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r->summary.control_transfers, 3u);
  EXPECT_EQ(r->summary.grants_committed + r->summary.failover_wins, 3u);
  EXPECT_EQ(r->summary.chat_by_participant.at("B"), 2u);
  EXPECT_EQ(r->summary.chat_by_participant.at("C"), 1u);
}

}  // namespace
}  // namespace climanic
