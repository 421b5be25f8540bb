// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
//
//   acceptance [--seeds N] [--lecture-seeds N] [--scenarios DIR]

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <latch>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "climanic/playback.hpp"
#include "climanic/registry/registry.hpp"
#include "climanic/registry/store.hpp"
#include "climanic/sim/scenario.hpp"
#include "climanic/sim/sim.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace climanic;

namespace {

struct Line {
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> lines;

void report(const std::string& name, bool pass, const std::string& detail) {
  lines.push_back({name, pass, detail});
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

const sim::CheckTally* tally(const sim::SweepResult& r, const std::string& check) {
  for (const auto& [name, t] : r.checks) {
    if (name == check) return &t;
  }
  return nullptr;
}

// Failures of `check` in a sweep, or a description of why it did not run.
struct Count {
  std::uint64_t pass = 0, fail = 0, na = 0;
  std::string first;
};

void add(Count& c, const sim::SweepResult& r, const std::string& check) {
  const auto* t = tally(r, check);
  if (t == nullptr) {
    ++c.fail;
    if (c.first.empty()) c.first = r.scenario + ": check " + check + " not configured";
    return;
  }
  c.pass += t->pass;
  c.fail += t->fail;
  c.na += t->not_applicable;
  if (t->fail && c.first.empty()) {
    c.first = r.scenario + " seed " + std::to_string(t->first_failing_seed.value_or(0)) + ": " + t->first_failure;
  }
}

std::string fmt_s(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f s", s);
  return buf;
}

std::uint64_t control_bytes(const sim::Trace& t) {
  std::uint64_t total = 0;
  for (const auto& r : t.records) {
    if (r.kind == "send" && r.data.at("control").get<bool>()) total += r.data.at("bytes").get<std::uint64_t>();
  }
  return total;
}

// Lecture runs are slow, so they go through run() directly and the
// per-check counts are assembled here.
sim::SweepResult run_lectures(const sim::Scenario& sc, std::uint64_t seeds, std::vector<std::uint64_t>& bytes) {
  sim::SweepResult out;
  out.scenario = sc.name;
  std::map<std::string, sim::CheckTally> by_name;
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    auto r = sim::run(sc, seed);
    ++out.runs;
    if (!r.passed()) ++out.failed_runs;
    bytes.push_back(control_bytes(r.trace));
    for (const auto& rec : r.trace.records) {
      if (rec.kind == "send") out.max_message_bytes = std::max(out.max_message_bytes, rec.data.at("bytes").get<std::uint64_t>());
    }
    for (const auto& v : r.verdicts) {
      auto& t = by_name[v.name];
      if (!v.applicable) {
        ++t.not_applicable;
      } else if (v.pass) {
        ++t.pass;
      } else {
        ++t.fail;
        if (!t.first_failing_seed) {
          t.first_failing_seed = seed;
          t.first_failure = v.detail;
        }
      }
    }
  }
  out.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.checks.assign(by_name.begin(), by_name.end());
  return out;
}

// --- registry CAS -----------------------------------------------------------

const CourseCatalog kCatalog({"casa101"});

struct ClaimSetup {
  GroupId group;
  std::vector<ParticipantId> members;
  ControlEpoch epoch;
};

// Group with a few members and some committed handovers, built the same way
// for a given seed.
ClaimSetup build_group(Registry& reg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ClaimSetup s;
  s.members.push_back(ParticipantId::of("m0"));
  auto g = reg.create_group("casa101", s.members[0], "10.0.0.1:1");
  s.group = g->group_id;
  const auto extra = 1 + rng() % 5;
  for (std::uint64_t i = 1; i <= extra; ++i) {
    s.members.push_back(ParticipantId::of("m" + std::to_string(i)));
    reg.join_group(s.group, s.members.back(), "10.0.0.1:" + std::to_string(i + 1));
  }
  const auto handovers = rng() % 4;
  ControlEpoch e = g->controller_epoch;
  for (std::uint64_t i = 0; i < handovers; ++i) {
    if (auto won = reg.claim_leadership(s.group, s.members[rng() % s.members.size()], e)) e = *won;
  }
  s.epoch = e;
  return s;
}

struct CasOutcome {
  bool ok = true;
  std::string why;
};

CasOutcome ordered_claims(std::uint64_t seed) {
  for (int order = 0; order < 2; ++order) {
    Registry reg(kCatalog, [] { return Millis{0}; }, seed);
    auto s = build_group(reg, seed);
    std::mt19937_64 rng(seed * 31 + 7);
    const auto a = rng() % s.members.size();
    auto b = rng() % (s.members.size() - 1);
    if (b >= a) ++b;
    const auto& first = order == 0 ? s.members[a] : s.members[b];
    const auto& second = order == 0 ? s.members[b] : s.members[a];
    auto r1 = reg.claim_leadership(s.group, first, s.epoch);
    auto r2 = reg.claim_leadership(s.group, second, s.epoch);
    const auto view = reg.get_members(s.group);
    const bool good = r1.ok() && r1->value == s.epoch.value + 1 && !r2.ok() && r2.code() == Errc::epoch_conflict &&
                      view && view->controller == first && view->controller_epoch.value == s.epoch.value + 1;
    if (!good) return {false, "seed " + std::to_string(seed) + " order " + std::to_string(order)};
  }
  return {};
}

CasOutcome threaded_claims(std::uint64_t seed) {
  Registry reg(kCatalog, [] { return Millis{0}; }, seed);
  auto s = build_group(reg, seed);
  const auto n = s.members.size();
  std::latch go(static_cast<std::ptrdiff_t>(n));
  std::vector<Result<ControlEpoch>> results(n, make_error(Errc::io_error));
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      go.arrive_and_wait();
      results[i] = reg.claim_leadership(s.group, s.members[i], s.epoch);
    });
  }
  for (auto& t : threads) t.join();
  std::size_t winners = 0, conflicts = 0, winner = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i].ok()) {
      ++winners;
      winner = i;
    } else if (results[i].code() == Errc::epoch_conflict) {
      ++conflicts;
    }
  }
  const auto view = reg.get_members(s.group);
  if (winners != 1 || conflicts != n - 1 || !view || view->controller != s.members[winner] ||
      view->controller_epoch.value != s.epoch.value + 1) {
    return {false, "seed " + std::to_string(seed) + ": " + std::to_string(winners) + " winners among " +
                       std::to_string(n) + " threads"};
  }
  return {};
}

void workload(Registry& reg, std::mt19937_64& rng, int steps) {
  std::vector<GroupId> groups;
  int names = 0;
  for (int i = 0; i < steps; ++i) {
    const auto pick = groups.empty() ? GroupId{} : groups[rng() % groups.size()];
    switch (groups.empty() ? 0 : rng() % 5) {
      case 0:
        if (auto g = reg.create_group("casa101", ParticipantId::of("c" + std::to_string(names++)), "10.1.0.1:1")) {
          groups.push_back(g->group_id);
        }
        break;
      case 1:
        reg.join_group(pick, ParticipantId::of("j" + std::to_string(names++)), "10.2.0.1:1");
        break;
      case 2:
        if (auto v = reg.get_members(pick); v && v->members.size() > 1) {
          reg.leave_group(pick, v->members[rng() % v->members.size()].participant);
        }
        break;
      case 3:
        if (auto v = reg.get_members(pick); v && !v->members.empty()) {
          reg.claim_leadership(pick, v->members[rng() % v->members.size()].participant, v->controller_epoch);
        }
        break;
      default:
        if (auto v = reg.get_group(pick); v && !v->members.empty()) {
          reg.set_active(pick, !v->active, v->members.front().participant);
        }
        break;
    }
  }
}

// A child process runs a workload against a persisted registry, records the
// expected snapshot text, then SIGKILLs itself mid-flight.
CasOutcome kill_and_restore(std::uint64_t seed) {
  const auto dir = fs::temp_directory_path() / ("climanic-accept-kill-" + std::to_string(::getpid()) + "-" +
                                                std::to_string(seed));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto expected_path = dir / "expected.txt";
  const pid_t pid = ::fork();
  if (pid < 0) return {false, "fork failed"};
  if (pid == 0) {
    std::mt19937_64 rng(seed);
    Millis now = 0;
    Registry reg(kCatalog, [&] { return now++; }, seed);
    RegistryStore::Options opts;
    opts.snapshot_every = 20 + rng() % 200;
    auto store = RegistryStore::open(dir.string(), reg, opts);
    if (!store) ::_exit(3);
    workload(reg, rng, 100 + static_cast<int>(rng() % 600));
    {
      std::ofstream out(expected_path);
      out << registry_snapshot_text(reg.all_groups());
    }
    ::kill(::getpid(), SIGKILL);
    ::_exit(4);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  CasOutcome out;
  if (!WIFSIGNALED(status) || WTERMSIG(status) != SIGKILL) {
    out = {false, "seed " + std::to_string(seed) + ": child did not die by SIGKILL"};
  } else {
    std::ifstream in(expected_path);
    std::string expected((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Registry restored(kCatalog, [] { return Millis{0}; }, seed + 1);
    auto store = RegistryStore::open(dir.string(), restored);
    if (!store) {
      out = {false, "seed " + std::to_string(seed) + ": restore failed: " + store.error().message};
    } else if (expected.empty() || registry_snapshot_text(restored.all_groups()) != expected) {
      out = {false, "seed " + std::to_string(seed) + ": restored state differs"};
    }
  }
  fs::remove_all(dir);
  return out;
}

// --- apply_event oracle -----------------------------------------------------

struct Expected {
  std::optional<Errc> error;
  Millis offset = 0;
  bool playing = false;
  std::optional<std::uint64_t> slide;  // exact when the offset stays put
};

bool newer(const Version& a, const Version& b) {
  if (a.epoch.value != b.epoch.value) return a.epoch.value > b.epoch.value;
  return a.seq > b.seq;
}

Expected model(const PlaybackState& s, const PlaybackEvent& e, const CoursewareManifest& m) {
  Expected x;
  x.offset = s.media_offset_ms;
  x.playing = s.playing;
  if (s.version && !newer(e.issued_version, *s.version)) {
    x.error = Errc::stale_event;
    return x;
  }
  switch (e.kind) {
    case EventKind::play:
    case EventKind::pause:
      if (e.position_ms > m.duration_ms) {
        x.error = Errc::out_of_bounds;
        return x;
      }
      if (e.position_ms == s.media_offset_ms) x.slide = s.slide_index;
      x.offset = e.position_ms;
      x.playing = e.kind == EventKind::play;
      break;
    case EventKind::seek:
      if (e.target > m.duration_ms) {
        x.error = Errc::out_of_bounds;
        return x;
      }
      x.offset = e.target;
      break;
    case EventKind::slide_change:
      if (e.target >= m.slide_count) {
        x.error = Errc::out_of_bounds;
        return x;
      }
      x.slide = e.target;
      x.offset = m.slide_start_ms[e.target];
      break;
  }
  return x;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CLIMANIC acceptance run"};
  std::uint64_t seeds = 1000;
  std::uint64_t lecture_seeds = 100;
  std::string scenario_dir = "scenarios";
  app.add_option("--seeds", seeds, "Seeds per quick scenario")->check(CLI::PositiveNumber);
  app.add_option("--lecture-seeds", lecture_seeds, "Seeds per lecture scenario")->check(CLI::PositiveNumber);
  app.add_option("--scenarios", scenario_dir, "Directory of bundled scenarios");
  CLI11_PARSE(app, argc, argv);

  std::vector<sim::Scenario> quick, lectures;
  for (const auto& entry : fs::directory_iterator(scenario_dir)) {
    if (entry.path().extension() != ".json") continue;
    auto sc = sim::load_scenario(entry.path());
    if (!sc) {
      std::fprintf(stderr, "error: %s\n", sc.error().message.c_str());
      return 2;
    }
    (sc->name.rfind("lecture-", 0) == 0 ? lectures : quick).push_back(*sc);
  }
  auto by_name = [](const auto& a, const auto& b) { return a.name < b.name; };
  std::sort(quick.begin(), quick.end(), by_name);
  std::sort(lectures.begin(), lectures.end(), by_name);
  if (quick.empty() || lectures.empty()) {
    std::fprintf(stderr, "error: no scenarios under %s\n", scenario_dir.c_str());
    return 2;
  }

  std::map<std::string, sim::SweepResult> sweeps;
  for (const auto& sc : quick) {
    sweeps[sc.name] = sim::sweep(sc, 1, seeds);
    std::fprintf(stderr, "swept %s: %llu runs, %s\n", sc.name.c_str(), static_cast<unsigned long long>(seeds),
                 fmt_s(sweeps[sc.name].elapsed_s).c_str());
  }
  std::map<std::string, std::vector<std::uint64_t>> lecture_bytes;
  for (const auto& sc : lectures) {
    sweeps[sc.name] = run_lectures(sc, lecture_seeds, lecture_bytes[sc.name]);
    std::fprintf(stderr, "ran %s: %llu runs, %s\n", sc.name.c_str(), static_cast<unsigned long long>(lecture_seeds),
                 fmt_s(sweeps[sc.name].elapsed_s).c_str());
  }
  auto need = [&](const std::string& name) -> const sim::SweepResult* {
    auto it = sweeps.find(name);
    return it == sweeps.end() ? nullptr : &it->second;
  };

  // 1. Single leader per epoch.
  {
    const std::vector<std::string> names = {"request-race-2", "request-race-3", "request-race-5",
                                            "graceful-transfer", "leader-crash", "partition"};
    Count c;
    double secs = 0;
    std::string missing;
    for (const auto& n : names) {
      const auto* r = need(n);
      if (!r) {
        missing += " " + n;
        continue;
      }
      add(c, *r, "single_leader");
      secs += r->elapsed_s;
    }
    const bool ok = missing.empty() && c.fail == 0 && c.pass == names.size() * seeds && secs < 120.0;
    report("single-leader safety", ok,
           std::to_string(c.pass) + "/" + std::to_string(names.size() * seeds) +
               " runs with one leader per epoch over races, transfer, crash, partition; " + fmt_s(secs) +
               " (limit 120 s)" + (missing.empty() ? "" : "; missing:" + missing) +
               (c.first.empty() ? "" : "; first: " + c.first));
  }

  // 2. Convergence in every bundled scenario.
  {
    Count c;
    std::uint64_t runs = 0;
    for (const auto& [name, r] : sweeps) {
      add(c, r, "convergence");
      runs += r.runs;
    }
    report("convergence", c.fail == 0 && c.na == 0 && c.pass == runs,
           std::to_string(c.pass) + "/" + std::to_string(runs) + " runs converged across " +
               std::to_string(sweeps.size()) + " scenarios (" + std::to_string(seeds) + " seeds each, lectures " +
               std::to_string(lecture_seeds) + ")" + (c.first.empty() ? "" : "; first: " + c.first));
  }

  // 3. Arbitration: one grant per race, one terminal outcome per request.
  {
    Count c;
    std::string missing;
    std::uint64_t expected = 0;
    for (const auto* n : {"request-race-2", "request-race-3", "request-race-5"}) {
      const auto* r = need(n);
      if (!r) {
        missing += std::string(" ") + n;
        continue;
      }
      add(c, *r, "race");
      add(c, *r, "exactly_one_outcome");
      expected += 2 * r->runs;
    }
    report("arbitration exactness", missing.empty() && c.fail == 0 && c.pass == expected && seeds >= 500,
           std::to_string(c.pass) + "/" + std::to_string(expected) +
               " race and outcome checks passed for k = 2, 3, 5 over " + std::to_string(seeds) + " seeds" +
               (missing.empty() ? "" : "; missing:" + missing) + (c.first.empty() ? "" : "; first: " + c.first));
  }

  // 4. Failover to the earliest joiner, registry agreeing.
  {
    Count c;
    const auto* r = need("leader-crash");
    if (r) {
      add(c, *r, "failover");
      add(c, *r, "registry_integrity");
    }
    report("failover correctness", r && c.fail == 0 && c.pass == 2 * r->runs,
           r ? std::to_string(c.pass) + "/" + std::to_string(2 * r->runs) +
                   " failover and registry checks passed in leader-crash" +
                   (c.first.empty() ? "" : "; first: " + c.first)
             : "leader-crash scenario missing");
  }

  // 5. Registry CAS and durability.
  {
    std::string first;
    std::uint64_t ordered = 0, threaded = 0, durable = 0;
    const std::uint64_t ordered_n = 1000, threaded_n = 200, durable_n = 25;
    for (std::uint64_t s = 1; s <= ordered_n; ++s) {
      auto o = ordered_claims(s);
      if (o.ok) ++ordered;
      else if (first.empty()) first = "ordered " + o.why;
    }
    for (std::uint64_t s = 1; s <= threaded_n; ++s) {
      auto o = threaded_claims(s);
      if (o.ok) ++threaded;
      else if (first.empty()) first = "threaded " + o.why;
    }
    for (std::uint64_t s = 1; s <= durable_n; ++s) {
      auto o = kill_and_restore(s);
      if (o.ok) ++durable;
      else if (first.empty()) first = "durability " + o.why;
    }
    report("registry CAS", first.empty(),
           std::to_string(ordered) + "/" + std::to_string(ordered_n) + " seeds one winner in both orders, " +
               std::to_string(threaded) + "/" + std::to_string(threaded_n) + " threaded races one winner, " +
               std::to_string(durable) + "/" + std::to_string(durable_n) + " SIGKILL restores byte-identical" +
               (first.empty() ? "" : "; first: " + first));
  }

  // 6. Frugality.
  {
    std::uint64_t largest = 0;
    std::string where;
    for (const auto& [name, r] : sweeps) {
      if (r.max_message_bytes > largest) {
        largest = r.max_message_bytes;
        where = name;
      }
    }
    const auto& ten = lecture_bytes["lecture-10min"];
    const auto& twenty = lecture_bytes["lecture-20min"];
    std::string detail = "largest message " + std::to_string(largest) + " B (" + where + ")";
    bool ok = largest < 1024;
    if (ten.empty() || twenty.empty()) {
      ok = false;
      detail += "; lecture scenarios missing";
    } else {
      const auto worst10 = *std::max_element(ten.begin(), ten.end());
      auto mean = [](const std::vector<std::uint64_t>& v) {
        double s = 0;
        for (auto b : v) s += static_cast<double>(b);
        return s / static_cast<double>(v.size());
      };
      const double m10 = mean(ten), m20 = mean(twenty);
      const double ratio = m20 / m10;
      // Same event count, twice the length: totals should not scale with time.
      ok = ok && worst10 < 100 * 1024 && ratio < 1.25;
      char buf[160];
      std::snprintf(buf, sizeof buf, "; 10-min lecture control bytes max %llu B (limit 102400), mean %.0f B; "
                                     "20-min mean %.0f B, ratio %.2f (limit 1.25)",
                    static_cast<unsigned long long>(worst10), m10, m20, ratio);
      detail += buf;
    }
    report("control-plane frugality", ok, detail);
  }

  // 7. Log replay.
  {
    Count c;
    std::uint64_t runs = 0;
    for (const auto& [name, r] : sweeps) {
      add(c, r, "log_replay");
      runs += r.runs;
    }
    report("log replay", c.fail == 0 && c.pass == runs,
           std::to_string(c.pass) + "/" + std::to_string(runs) +
               " runs replayed to the live final state with transfers = grants + failover wins" +
               (c.first.empty() ? "" : "; first: " + c.first));
  }

  // 8. apply_event against a brute-force model.
  {
    std::mt19937_64 rng(20240607);
    const std::uint64_t n = 10000;
    std::uint64_t good = 0, stale = 0, oob = 0;
    std::string first;
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto m = testing_oracles::random_manifest(rng);
      auto [s, e] = testing_oracles::random_state_event(rng, m);
      if (rng() % 10 == 0) {
        // Equal or older version.
        e.issued_version = *s.version;
        if (rng() & 1 && e.issued_version.seq > 0) --e.issued_version.seq;
      }
      const auto x = model(s, e, m);
      const auto got = apply_event(s, e, m);
      bool ok;
      if (x.error) {
        ok = !got.ok() && got.code() == *x.error;
        (*x.error == Errc::stale_event ? stale : oob) += ok;
      } else {
        ok = got.ok() && got->media_offset_ms == x.offset && got->playing == x.playing && got->version &&
             *got->version == e.issued_version && testing_oracles::coherent(m, *got) &&
             (!x.slide || got->slide_index == *x.slide);
      }
      if (ok) ++good;
      else if (first.empty()) first = "pair " + std::to_string(i) + " (" + std::string(to_string(e.kind)) + ")";
    }
    report("state-machine oracle", good == n && stale > 0 && oob > 0,
           std::to_string(good) + "/" + std::to_string(n) + " random pairs matched (" + std::to_string(stale) +
               " stale, " + std::to_string(oob) + " out of bounds)" + (first.empty() ? "" : "; first: " + first));
  }

  const auto failed = std::count_if(lines.begin(), lines.end(), [](const Line& l) { return !l.pass; });
  std::printf("%zu/%zu criteria passed\n", lines.size() - static_cast<std::size_t>(failed), lines.size());
  return failed == 0 ? 0 : 1;
}
