#include "climanic/log/replay.hpp"

#include "climanic/codec.hpp"

namespace climanic {

using nlohmann::json;

json to_json(const LogSummary& s) {
  return json{{"records", s.records},
              {"counts_by_kind", s.counts_by_kind},
              {"control_transfers", s.control_transfers},
              {"grants_committed", s.grants_committed},
              {"failover_wins", s.failover_wins},
              {"slide_changes", s.slide_changes},
              {"non_sequential_slide_changes", s.non_sequential_slide_changes},
              {"non_sequential_fraction", s.non_sequential_fraction()},
              {"seeks", s.seeks},
              {"chat_by_participant", s.chat_by_participant},
              {"playback_by_participant", s.playback_by_participant}};
}

Result<ReplayResult> replay(const std::vector<LogEvent>& log, const CoursewareManifest& manifest) {
  namespace d = log_detail;
  ReplayResult out;
  auto& sum = out.summary;
  std::optional<ControlEpoch> last_epoch;

  for (std::size_t i = 0; i < log.size(); ++i) {
    const LogEvent& rec = log[i];
    if (rec.seq != i) {
      return make_error(Errc::gap_detected, "expected record seq " + std::to_string(i) + ", found " +
                                                std::to_string(rec.seq));
    }
    ++sum.records;
    ++sum.counts_by_kind[std::string(to_string(rec.kind))];
    // A (re)join picks up whatever epoch the group is at; that is not a
    // transfer this peer witnessed.
    if (last_epoch && rec.epoch > *last_epoch && rec.kind != LogKind::join) ++sum.control_transfers;
    if (!last_epoch || rec.epoch > *last_epoch) last_epoch = rec.epoch;

    try {
      if (rec.detail.contains(d::kState)) out.state = rec.detail.at(d::kState).get<PlaybackState>();

      switch (rec.kind) {
        case LogKind::play:
        case LogKind::pause:
        case LogKind::seek:
        case LogKind::slide_change: {
          auto ev = rec.detail.at(d::kEvent).get<PlaybackEvent>();
          const auto before = out.state.slide_index;
          auto next = apply_event(out.state, ev, manifest);
          if (!next) {
            return make_error(Errc::corrupt_log, "record " + std::to_string(rec.seq) +
                                                     " does not apply: " + next.error().message);
          }
          out.state = *next;
          ++sum.playback_by_participant[ev.issuer.str()];
          if (rec.kind == LogKind::seek) ++sum.seeks;
          if (rec.kind == LogKind::slide_change) {
            ++sum.slide_changes;
            const auto delta = ev.target > before ? ev.target - before : before - ev.target;
            if (delta != 1) ++sum.non_sequential_slide_changes;
          }
          break;
        }
        case LogKind::control_grant:
          if (rec.detail.value(d::kStatus, "") == d::kCommitted) ++sum.grants_committed;
          break;
        case LogKind::failover_claim:
          if (rec.detail.value(d::kResult, "") == d::kWon) ++sum.failover_wins;
          break;
        case LogKind::chat:
          ++sum.chat_by_participant[rec.detail.at(d::kOrigin).get<std::string>()];
          break;
        default:
          break;
      }
    } catch (const std::exception& e) {
      return make_error(Errc::corrupt_log, "record " + std::to_string(rec.seq) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace climanic
