#pragma once

// Reliable, ordered delivery per (local, remote) pair on top of a transport
// that may drop, delay and reorder frames. Sequence numbers start at 1 per
// link incarnation; acks are cumulative and travel as frames of their own
// (seq 0). Unacknowledged frames are resent every `rto_ms` until acked or the
// link is forgotten. A remote that forgets and re-creates its side shows up
// with a higher incarnation and the receive side resets to match.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>

#include "climanic/types.hpp"

namespace climanic {

template <typename Body>
struct LinkFrame {
  std::uint64_t incarnation = 0;
  std::uint64_t seq = 0;  // 0: ack only
  /// Receiver side: highest in-order seq received from the peer's
  /// `ack_incarnation`.
  std::uint64_t ack = 0;
  std::uint64_t ack_incarnation = 0;
  std::shared_ptr<const Body> body;
  bool retransmission = false;
};

template <typename Body>
class ReliableLinks {
 public:
  using Frame = LinkFrame<Body>;
  using Transmit = std::function<void(const std::string& remote, const Frame&)>;
  using Deliver = std::function<void(const std::string& remote, const Body&)>;

  explicit ReliableLinks(Millis rto_ms = 400) : rto_ms_(rto_ms) {}

  void send(const std::string& remote, Body body, Millis now, const Transmit& tx) {
    auto& s = out_[remote];
    if (s.incarnation == 0) s.incarnation = ++incarnations_;
    Pending p{++s.next_seq, std::make_shared<const Body>(std::move(body)), now};
    Frame f{s.incarnation, p.seq, 0, 0, p.body, false};
    s.unacked.push_back(std::move(p));
    tx(remote, f);
  }

  void on_frame(const std::string& remote, const Frame& f, Millis now, const Deliver& deliver, const Transmit& tx) {
    (void)now;
    if (f.seq == 0) {
      auto it = out_.find(remote);
      if (it == out_.end() || it->second.incarnation != f.ack_incarnation) return;
      auto& q = it->second.unacked;
      while (!q.empty() && q.front().seq <= f.ack) q.pop_front();
      return;
    }
    auto& r = in_[remote];
    if (f.incarnation < r.incarnation) return;
    if (f.incarnation > r.incarnation) r = Incoming{f.incarnation, 0, {}};
    if (f.seq > r.delivered) r.held.emplace(f.seq, f.body);
    while (!r.held.empty() && r.held.begin()->first == r.delivered + 1) {
      auto body = r.held.begin()->second;
      r.held.erase(r.held.begin());
      ++r.delivered;
      deliver(remote, *body);
    }
    tx(remote, Frame{0, 0, r.delivered, r.incarnation, nullptr, false});
  }

  /// Resends every frame that has waited at least rto_ms.
  void on_timer(Millis now, const Transmit& tx) {
    for (auto& [remote, s] : out_) {
      for (auto& p : s.unacked) {
        if (now >= p.sent_at + rto_ms_) {
          p.sent_at = now;
          tx(remote, Frame{s.incarnation, p.seq, 0, 0, p.body, true});
        }
      }
    }
  }

  Millis next_timer() const {
    Millis t = ~Millis{0};
    for (const auto& [remote, s] : out_) {
      for (const auto& p : s.unacked) t = std::min(t, p.sent_at + rto_ms_);
    }
    return t;
  }

  /// Drops everything queued for `remote`; the next send starts a new
  /// incarnation.
  void forget(const std::string& remote) {
    auto it = out_.find(remote);
    if (it == out_.end()) return;
    it->second.unacked.clear();
    it->second.incarnation = ++incarnations_;
    it->second.next_seq = 0;
  }

  std::size_t unacked(const std::string& remote) const {
    auto it = out_.find(remote);
    return it == out_.end() ? 0 : it->second.unacked.size();
  }

 private:
  struct Pending {
    std::uint64_t seq;
    std::shared_ptr<const Body> body;
    Millis sent_at;
  };
  struct Outgoing {
    std::uint64_t incarnation = 0;
    std::uint64_t next_seq = 0;
    std::deque<Pending> unacked;
  };
  struct Incoming {
    std::uint64_t incarnation = 0;
    std::uint64_t delivered = 0;
    std::map<std::uint64_t, std::shared_ptr<const Body>> held;
  };

  Millis rto_ms_;
  std::uint64_t incarnations_ = 0;
  std::map<std::string, Outgoing> out_;
  std::map<std::string, Incoming> in_;
};

}  // namespace climanic
