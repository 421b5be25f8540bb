#include "climanic/types.hpp"

#include <charconv>
#include <stdexcept>

namespace climanic {

Result<ParticipantId> ParticipantId::parse(std::string_view name) {
  if (name.empty()) return make_error(Errc::invalid_argument, "participant id is empty");
  if (name.size() > kMaxBytes) {
    return make_error(Errc::invalid_argument, "participant id longer than 64 bytes");
  }
  for (unsigned char c : name) {
    if (c < 0x20 || c == 0x7f) {
      return make_error(Errc::invalid_argument, "participant id contains a control character");
    }
  }
  return ParticipantId(std::string(name));
}

ParticipantId ParticipantId::of(std::string_view name) {
  auto r = parse(name);
  if (!r) throw std::invalid_argument(r.error().message);
  return std::move(r).value();
}

Result<GroupId> GroupId::parse(std::string_view hex) {
  if (hex.size() != 32) return make_error(Errc::invalid_argument, "group id must be 32 hex chars");
  GroupId g;
  for (std::size_t i = 0; i < 16; ++i) {
    unsigned v = 0;
    const char* first = hex.data() + 2 * i;
    for (const char* p = first; p != first + 2; ++p) {
      if (!((*p >= '0' && *p <= '9') || (*p >= 'a' && *p <= 'f'))) {
        return make_error(Errc::invalid_argument, "group id must be lowercase hex");
      }
    }
    std::from_chars(first, first + 2, v, 16);
    g.bytes_[i] = static_cast<std::uint8_t>(v);
  }
  return g;
}

GroupId GroupId::random(std::mt19937_64& rng) {
  GroupId g;
  for (std::size_t i = 0; i < 16; i += 8) {
    std::uint64_t word = rng();
    for (std::size_t j = 0; j < 8; ++j) g.bytes_[i + j] = static_cast<std::uint8_t>(word >> (8 * j));
  }
  return g;
}

std::string GroupId::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(32, '0');
  for (std::size_t i = 0; i < 16; ++i) {
    out[2 * i] = kDigits[bytes_[i] >> 4];
    out[2 * i + 1] = kDigits[bytes_[i] & 0x0f];
  }
  return out;
}

bool is_valid_endpoint(std::string_view endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return false;
  auto port_str = endpoint.substr(colon + 1);
  if (port_str.empty() || port_str.size() > 5) return false;
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_str.data(), port_str.data() + port_str.size(), port);
  if (ec != std::errc{} || ptr != port_str.data() + port_str.size()) return false;
  return port >= 1 && port <= 65535;
}

}  // namespace climanic
