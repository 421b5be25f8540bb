#include "climanic/log/log.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <zlib.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "climanic/codec.hpp"

namespace climanic {

namespace {

std::uint32_t checksum(std::string_view s) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

std::string hex8(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return std::string(buf, 8);
}

/// Decodes one line without its newline; nullopt when damaged.
std::optional<LogEvent> decode_line(std::string_view line) {
  if (line.size() < 10 || line[8] != ' ') return std::nullopt;
  auto body = line.substr(9);
  if (hex8(checksum(body)) != line.substr(0, 8)) return std::nullopt;
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  auto ev = log_event_from_json(j);
  if (!ev) return std::nullopt;
  return std::move(ev).value();
}

}  // namespace

std::string encode_log_line(const LogEvent& e) {
  const std::string body = canonical(nlohmann::json(e));
  std::string out = hex8(checksum(body));
  out.reserve(body.size() + 10);
  out.push_back(' ');
  out.append(body);
  out.push_back('\n');
  return out;
}

Result<LogContents> parse_log(std::string_view text) {
  LogContents out;
  std::size_t pos = 0;
  std::optional<std::size_t> damaged_at;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    const bool complete = nl != std::string_view::npos;
    auto line = text.substr(pos, complete ? nl - pos : std::string_view::npos);
    auto ev = complete ? decode_line(line) : std::nullopt;
    if (!ev) {
      if (!damaged_at) damaged_at = pos;
      if (!complete) break;
    } else {
      if (damaged_at) {
        return make_error(Errc::corrupt_log, "damaged record at byte " + std::to_string(*damaged_at) +
                                                 " is followed by intact records");
      }
      out.events.push_back(std::move(*ev));
      out.valid_bytes = nl + 1;
    }
    if (!complete) break;
    pos = nl + 1;
  }
  out.torn_tail = out.valid_bytes < text.size();
  return out;
}

Result<LogContents> read_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return make_error(Errc::io_error, "cannot open log " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_log(ss.str());
}

Result<std::unique_ptr<LogWriter>> LogWriter::open(const std::string& path, Options opts) {
  std::uint64_t next_seq = 0;
  std::uint64_t valid = 0;
  struct stat st {};
  const bool regular = ::stat(path.c_str(), &st) == 0 && S_ISREG(st.st_mode);
  if (regular && st.st_size > 0) {
    auto contents = read_log(path);
    if (!contents) return contents.error();
    if (!contents->events.empty()) next_seq = contents->events.back().seq + 1;
    valid = contents->valid_bytes;
    if (contents->torn_tail && ::truncate(path.c_str(), static_cast<off_t>(valid)) != 0) {
      return make_error(Errc::io_error, "cannot truncate torn tail of " + path);
    }
  }
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) return make_error(Errc::io_error, "cannot open log " + path + ": " + std::strerror(errno));
  std::unique_ptr<LogWriter> w(new LogWriter(path, fd, opts));
  w->next_seq_ = next_seq;
  w->end_offset_ = valid;
  return w;
}

LogWriter::~LogWriter() {
  if (fd_ >= 0) {
    (void)flush();
    ::close(fd_);
  }
}

Result<std::uint64_t> LogWriter::append(LogEvent ev) {
  ev.seq = next_seq_++;
  const std::uint64_t offset = end_offset_;
  const std::string line = encode_log_line(ev);
  if (buffered_records_ == 0) oldest_buffered_at_ = ev.at;
  buf_ += line;
  end_offset_ += line.size();
  ++buffered_records_;
  if (buffered_records_ >= opts_.flush_every || ev.at >= oldest_buffered_at_ + opts_.flush_interval_ms) {
    if (auto r = flush(); !r) return r.error();
  }
  return offset;
}

Result<void> LogWriter::tick(Millis now) {
  if (buffered_records_ > 0 && now >= oldest_buffered_at_ + opts_.flush_interval_ms) return flush();
  return {};
}

Result<void> LogWriter::flush() {
  std::size_t off = 0;
  while (off < buf_.size()) {
    ssize_t n = ::write(fd_, buf_.data() + off, buf_.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      buf_.erase(0, off);
      if (err == ENOSPC || err == EDQUOT) return make_error(Errc::storage_full, path_ + ": no space left");
      return make_error(Errc::io_error, path_ + ": " + std::strerror(err));
    }
    off += static_cast<std::size_t>(n);
  }
  buf_.clear();
  buffered_records_ = 0;
  if (opts_.fsync) ::fsync(fd_);
  return {};
}

std::uint64_t MemoryLog::append(LogEvent ev) {
  ev.seq = next_seq_++;
  const std::uint64_t offset = text_.size();
  text_ += encode_log_line(ev);
  return offset;
}

std::string session_log_name(const GroupId& g, Millis started_at) {
  return g.hex() + "-" + std::to_string(started_at) + ".log";
}

}  // namespace climanic
