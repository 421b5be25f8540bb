#pragma once

// Event log files. One record per line:
//
//   <crc32 of the JSON, 8 lowercase hex> <space> <canonical JSON LogEvent> \n
//
// A bad or incomplete final line is a write cut short by a crash and is
// truncated on open; a bad line followed by good ones is corruption.
// docs/log-format.md has the byte-level description.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "climanic/log/event.hpp"
#include "climanic/result.hpp"

namespace climanic {

/// One encoded line, newline included.
std::string encode_log_line(const LogEvent& e);

struct LogContents {
  std::vector<LogEvent> events;
  /// Bytes covered by intact records; anything after was a torn tail.
  std::uint64_t valid_bytes = 0;
  bool torn_tail = false;
};

/// CorruptLog when a damaged record is followed by an intact one.
Result<LogContents> parse_log(std::string_view text);
Result<LogContents> read_log(const std::string& path);

class LogWriter {
 public:
  struct Options {
    /// Write buffered records after this many appends.
    std::size_t flush_every = 64;
    /// ...or once the oldest buffered record is this old.
    Millis flush_interval_ms = 1000;
    bool fsync = false;
  };

  /// Opens or creates `path`. An existing file is validated, its torn tail
  /// cut off, and numbering continues after its last record.
  static Result<std::unique_ptr<LogWriter>> open(const std::string& path, Options opts);

  ~LogWriter();
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;

  /// Stamps ev.seq and buffers the record. Returns its byte offset in the
  /// file. StorageFull when a triggered flush hits a full device.
  Result<std::uint64_t> append(LogEvent ev);
  /// Flushes if the oldest buffered record is older than the interval.
  Result<void> tick(Millis now);
  Result<void> flush();

  std::uint64_t next_seq() const noexcept { return next_seq_; }
  const std::string& path() const noexcept { return path_; }

 private:
  LogWriter(std::string path, int fd, Options opts) : path_(std::move(path)), fd_(fd), opts_(opts) {}

  std::string path_;
  int fd_ = -1;
  Options opts_;
  std::string buf_;
  std::size_t buffered_records_ = 0;
  Millis oldest_buffered_at_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t end_offset_ = 0;
};

/// In-memory log with the same encoding, used by the simulator.
class MemoryLog {
 public:
  std::uint64_t append(LogEvent ev);
  const std::string& text() const noexcept { return text_; }
  std::uint64_t size() const noexcept { return next_seq_; }

 private:
  std::string text_;
  std::uint64_t next_seq_ = 0;
};

/// File name for one group session log: <group_id>-<first epoch-0 ms>.log
std::string session_log_name(const GroupId& g, Millis started_at);

}  // namespace climanic
