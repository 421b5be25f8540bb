#include "climanic/registry/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "climanic/codec.hpp"

namespace climanic {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string change_line(const RegistryChange& c) {
  json j{{"group_id", c.group_id}};
  if (c.record) {
    j["op"] = "put";
    j["record"] = *c.record;
  } else {
    j["op"] = "delete";
  }
  return canonical(j) + "\n";
}

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("registry log write: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

Result<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return make_error(Errc::io_error, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string registry_snapshot_text(const std::vector<GroupRecord>& groups) {
  json j{{"format", 1}, {"groups", groups}};
  return canonical(j) + "\n";
}

Result<std::unique_ptr<RegistryStore>> RegistryStore::open(const std::string& dir, Registry& registry,
                                                          Options opts) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return make_error(Errc::io_error, "cannot create " + dir + ": " + ec.message());

  std::unique_ptr<RegistryStore> store(new RegistryStore(dir, opts));

  if (fs::exists(store->snapshot_path())) {
    auto text = read_file(store->snapshot_path());
    if (!text) return text.error();
    json j = json::parse(*text, nullptr, false);
    if (j.is_discarded()) return make_error(Errc::corrupt_state, "registry.snapshot is not valid JSON");
    try {
      if (j.at("format").get<int>() != 1) return make_error(Errc::corrupt_state, "unknown snapshot format");
      for (auto& rec : j.at("groups").get<std::vector<GroupRecord>>()) {
        store->mirror_[rec.group_id.hex()] = std::move(rec);
      }
    } catch (const std::exception& e) {
      return make_error(Errc::corrupt_state, std::string("registry.snapshot: ") + e.what());
    }
  }

  if (fs::exists(store->log_path())) {
    auto text = read_file(store->log_path());
    if (!text) return text.error();
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text->size()) {
      auto nl = text->find('\n', pos);
      // A final line without a newline is a write cut short by a crash;
      // the mutation it describes was never acknowledged.
      if (nl == std::string::npos) break;
      ++line_no;
      json j = json::parse(std::string_view(*text).substr(pos, nl - pos), nullptr, false);
      pos = nl + 1;
      try {
        if (j.is_discarded()) throw std::invalid_argument("not valid JSON");
        auto id = j.at("group_id").get<GroupId>();
        auto op = j.at("op").get<std::string>();
        if (op == "put") {
          store->mirror_[id.hex()] = j.at("record").get<GroupRecord>();
        } else if (op == "delete") {
          store->mirror_.erase(id.hex());
        } else {
          throw std::invalid_argument("unknown op " + op);
        }
      } catch (const std::exception& e) {
        return make_error(Errc::corrupt_state,
                          "registry.log line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::vector<GroupRecord> groups;
  for (const auto& [id, rec] : store->mirror_) groups.push_back(rec);
  registry.load(std::move(groups));

  {
    std::lock_guard lock(store->mu_);
    if (auto r = store->snapshot_locked(); !r) return r.error();
  }
  RegistryStore* raw = store.get();
  registry.set_change_listener([raw](const RegistryChange& c) { raw->record(c); });
  return store;
}

RegistryStore::~RegistryStore() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

Result<void> RegistryStore::open_log_locked(bool truncate) {
  if (log_fd_ >= 0) ::close(log_fd_);
  int flags = O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC;
  if (truncate) flags |= O_TRUNC;
  log_fd_ = ::open(log_path().c_str(), flags, 0644);
  if (log_fd_ < 0) return make_error(Errc::io_error, "cannot open " + log_path() + ": " + std::strerror(errno));
  return {};
}

void RegistryStore::record(const RegistryChange& c) {
  std::lock_guard lock(mu_);
  if (c.record) {
    mirror_[c.group_id.hex()] = *c.record;
  } else {
    mirror_.erase(c.group_id.hex());
  }
  write_all(log_fd_, change_line(c));
  if (opts_.fsync_each) ::fsync(log_fd_);
  ++since_snapshot_;
  if (opts_.snapshot_every != 0 && since_snapshot_ >= opts_.snapshot_every) {
    if (auto r = snapshot_locked(); !r) throw std::runtime_error(r.error().message);
  }
}

Result<void> RegistryStore::snapshot() {
  std::lock_guard lock(mu_);
  return snapshot_locked();
}

Result<void> RegistryStore::snapshot_locked() {
  std::vector<GroupRecord> groups;
  groups.reserve(mirror_.size());
  for (const auto& [id, rec] : mirror_) groups.push_back(rec);
  const std::string text = registry_snapshot_text(groups);
  const std::string tmp = snapshot_path() + ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) return make_error(Errc::io_error, "cannot write " + tmp + ": " + std::strerror(errno));
  try {
    write_all(fd, text);
  } catch (const std::exception& e) {
    ::close(fd);
    return make_error(Errc::io_error, e.what());
  }
  ::fsync(fd);
  ::close(fd);
  if (::rename(tmp.c_str(), snapshot_path().c_str()) != 0) {
    return make_error(Errc::io_error, "rename snapshot: " + std::string(std::strerror(errno)));
  }
  // Crash between rename and truncate replays puts the snapshot already
  // holds; full-record puts make that harmless.
  since_snapshot_ = 0;
  return open_log_locked(true);
}

std::uint64_t RegistryStore::records_since_snapshot() const {
  std::lock_guard lock(mu_);
  return since_snapshot_;
}

}  // namespace climanic
