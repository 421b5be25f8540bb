// climanic: registry, peer, simulator and log tools.
//
// Exit codes: 0 success, 1 failed check or runtime failure, 2 usage or
// configuration error.

#include <CLI11.hpp>

#include <signal.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "climanic/cli/config.hpp"
#include "climanic/codec.hpp"
#include "climanic/log/log.hpp"
#include "climanic/log/replay.hpp"
#include "climanic/manifest.hpp"
#include "climanic/net/gateway.hpp"
#include "climanic/net/live.hpp"
#include "climanic/net/registry_server.hpp"
#include "climanic/registry/protocol.hpp"
#include "climanic/registry/store.hpp"
#include "climanic/sim/sim.hpp"

using namespace climanic;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

int fail(const Error& e, int code = kFailed) {
  std::cerr << "error: " << to_string(e.code) << ": " << e.message << "\n";
  return code;
}

int usage(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return kUsage;
}

/// Flags, env names and defaults for one leaf command.
struct Command {
  std::string path;  // "peer run"
  std::vector<cli::Setting> settings;
  std::map<std::string, std::optional<std::string>> flags;
};

struct Globals {
  std::optional<std::string> config_path;
  bool print_config = false;
};

void declare(CLI::App* app, Command& cmd, const std::string& key, const std::string& env,
             std::optional<std::string> fallback, const std::string& help) {
  cmd.settings.push_back(cli::Setting{key, env, fallback});
  auto& slot = cmd.flags[key];
  std::string desc = help;
  if (!env.empty()) desc += " [env " + env + "]";
  if (fallback) desc += " [default " + *fallback + "]";
  app->add_option("--" + key, slot, desc);
}

/// Resolves every setting of `cmd`; nullopt plus a printed error on a bad
/// config file.
std::optional<cli::Config> resolve(const Command& cmd, const Globals& g) {
  json section = json::object();
  auto path = g.config_path ? g.config_path : cli::process_env("CLIMANIC_CONFIG");
  if (path) {
    auto s = cli::load_config_section(*path, cmd.path);
    if (!s) {
      fail(s.error(), kUsage);
      return std::nullopt;
    }
    section = *s;
  }
  cli::Config cfg(section, cli::process_env);
  for (const auto& s : cmd.settings) cfg.resolve(s, cmd.flags.at(s.key));
  return cfg;
}

std::optional<std::string> opt(const cli::Config& c, const std::string& key) { return c.get(key).value; }

Result<Millis> as_millis(const cli::Config& c, const std::string& key) {
  const auto v = opt(c, key);
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v.value_or(""), &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return static_cast<Millis>(n);
  } catch (const std::exception&) {
    return make_error(Errc::invalid_argument, "--" + key + " must be a non-negative integer");
  }
}

/// Blocks SIGINT/SIGTERM so every thread inherits the mask; the main thread
/// then collects them with sigtimedwait.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

bool stop_requested(const sigset_t& set, Millis wait_ms) {
  timespec ts{static_cast<time_t>(wait_ms / 1000), static_cast<long>((wait_ms % 1000) * 1000000)};
  return sigtimedwait(&set, nullptr, &ts) > 0;
}

// registry

int registry_serve(const cli::Config& c) {
  const auto courses_path = opt(c, "courses");
  if (!courses_path) return usage("--courses is required");
  auto listen = net::parse_endpoint(*opt(c, "listen"));
  if (!listen) return fail(listen.error(), kUsage);
  auto snapshot_every = as_millis(c, "snapshot-every");
  if (!snapshot_every) return fail(snapshot_every.error(), kUsage);
  auto catalog = CourseCatalog::load(*courses_path);
  if (!catalog) return fail(catalog.error(), kUsage);

  const auto signals = block_stop_signals();
  Registry registry(std::move(*catalog), net::wall_ms, std::random_device{}());
  RegistryStore::Options so;
  so.snapshot_every = *snapshot_every;
  so.fsync_each = opt(c, "fsync") == "true";
  const auto dir = *opt(c, "data-dir");
  auto store = RegistryStore::open(dir, registry, so);
  if (!store) {
    if (store.code() == Errc::corrupt_state) {
      std::cerr << "error: corrupt_state: " << store.error().message << "\n"
                << "hint: move " << dir << "/registry.log aside to start from the last snapshot, or restore "
                << dir << " from a backup\n";
      return kFailed;
    }
    return fail(store.error());
  }
  net::RegistryServer server(registry);
  auto port = server.start(*listen);
  if (!port) return fail(port.error());
  std::cout << "registry listening on " << listen->host << ":" << *port << std::endl;
  while (!stop_requested(signals, 1000)) {
  }
  server.stop();
  (void)(*store)->snapshot();
  return kOk;
}

int registry_call(const cli::Config& c, const json& request) {
  auto ep = net::parse_endpoint(*opt(c, "registry"));
  if (!ep) return fail(ep.error(), kUsage);
  auto client = net::RegistryClient::connect(*ep);
  if (!client) return fail(client.error());
  auto resp = client->call(request);
  if (!resp) return fail(resp.error());
  auto result = registry_proto::unwrap(*resp);
  if (!result) return fail(result.error());
  std::cout << result->dump(2) << "\n";
  return kOk;
}

// peer

int peer_run(const cli::Config& c) {
  const auto name = opt(c, "name");
  const auto manifest_path = opt(c, "manifest");
  const auto group = opt(c, "group");
  const auto create = opt(c, "create");
  if (!name) return usage("--name is required");
  if (!manifest_path) return usage("--manifest is required");
  if (group.has_value() == create.has_value()) return usage("give exactly one of --group and --create");
  auto manifest = load_manifest(*manifest_path);
  if (!manifest) return fail(manifest.error(), kUsage);
  auto registry = net::parse_endpoint(*opt(c, "registry"));
  if (!registry) return fail(registry.error(), kUsage);
  auto listen = net::parse_endpoint(*opt(c, "listen"));
  if (!listen) return fail(listen.error(), kUsage);
  auto linger = as_millis(c, "linger-ms");
  if (!linger) return fail(linger.error(), kUsage);
  std::optional<GroupId> gid;
  if (group) {
    auto g = GroupId::parse(*group);
    if (!g) return fail(g.error(), kUsage);
    gid = *g;
  }
  std::optional<net::HeadlessScript> script;
  if (auto path = opt(c, "headless")) {
    auto s = net::load_headless_script(*path);
    if (!s) return fail(s.error(), kUsage);
    script = std::move(*s);
  }
  std::optional<net::Endpoint> ui;
  if (!script) {
    auto e = net::parse_endpoint(*opt(c, "ui-listen"));
    if (!e) return fail(e.error(), kUsage);
    ui = *e;
  }

  const auto signals = block_stop_signals();
  net::LiveOptions lo;
  lo.peer.self = ParticipantId::of(*name);
  lo.peer.manifest = std::move(*manifest);
  lo.listen = *listen;
  lo.registry = *registry;
  lo.log_path = opt(c, "log").value_or("");
  auto host = net::LiveHost::create(std::move(lo));
  if (!host) return fail(host.error());
  auto& h = **host;

  std::optional<net::Gateway> gateway;
  if (ui) {
    gateway.emplace(h);
    auto port = gateway->start(*ui);
    if (!port) return fail(port.error());
    std::cout << "ui gateway on http://" << ui->host << ":" << *port << "/" << std::endl;
  }
  h.start();
  if (create) {
    h.create_group(*create);
  } else {
    h.join_group(*gid);
  }
  if (script) h.run_script(*script);

  const auto started = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return static_cast<Millis>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count());
  };
  bool announced = false;
  for (;;) {
    if (stop_requested(signals, 100)) break;
    const json v = h.state();
    if (!announced && v.contains("group_id") && v.at("phase") != "joining") {
      std::cout << "group " << v.at("group_id").get<std::string>() << std::endl;
      announced = true;
    }
    if (v.at("phase") == "departed") break;
    if (script && elapsed() >= script->duration_ms + *linger) break;
  }
  if (gateway) gateway->stop();
  h.stop();
  const json final_view = h.state();
  if (script) std::cout << final_view.dump() << std::endl;
  if (final_view.contains("departure")) {
    const auto code = errc_from_string(final_view.at("departure").get<std::string>());
    return fail(make_error(code.value_or(Errc::protocol_error), "peer left the session"));
  }
  return kOk;
}

// sim

Result<sim::Scenario> scenario_from(const cli::Config& c) {
  const auto path = opt(c, "scenario");
  if (!path) return make_error(Errc::scenario_invalid, "--scenario is required");
  return sim::load_scenario(*path);
}

void print_verdicts(const std::vector<sim::CheckVerdict>& verdicts) {
  for (const auto& v : verdicts) {
    const char* status = !v.applicable ? "n/a " : v.pass ? "PASS" : "FAIL";
    std::cout << status << "  " << v.name;
    if (!v.detail.empty()) std::cout << "  " << v.detail;
    std::cout << "\n";
  }
}

int sim_run(const cli::Config& c) {
  auto sc = scenario_from(c);
  if (!sc) return fail(sc.error(), kUsage);
  auto seed = as_millis(c, "seed");
  if (!seed) return fail(seed.error(), kUsage);
  const auto r = sim::run(*sc, *seed);
  std::cout << sc->name << " seed " << *seed << "\n";
  print_verdicts(r.verdicts);
  if (auto out = opt(c, "trace-out"); out && !r.passed()) {
    const auto dir = std::filesystem::path(*out) / (sc->name + "-seed" + std::to_string(*seed));
    if (auto w = sim::write_trace(r.trace, dir, &sc->manifest); !w) return fail(w.error());
    std::cout << "trace written to " << dir.string() << "\n";
  }
  return r.passed() ? kOk : kFailed;
}

int sim_sweep(const cli::Config& c) {
  auto sc = scenario_from(c);
  if (!sc) return fail(sc.error(), kUsage);
  const auto range = *opt(c, "seeds");
  const auto dots = range.find("..");
  std::uint64_t first = 0, last = 0;
  try {
    if (dots == std::string::npos) throw std::invalid_argument(range);
    std::size_t a = 0, b = 0;
    first = std::stoull(range.substr(0, dots), &a);
    last = std::stoull(range.substr(dots + 2), &b);
    if (a != dots || b != range.size() - dots - 2 || last < first) throw std::invalid_argument(range);
  } catch (const std::exception&) {
    return usage("--seeds must look like a..b with a <= b");
  }
  std::optional<std::filesystem::path> out;
  if (auto o = opt(c, "trace-out")) out = *o;
  const auto r = sim::sweep(*sc, first, last, out);
  std::cout << sim::format_sweep(r);
  return r.passed() ? kOk : kFailed;
}

// log

Result<ReplayResult> replay_from(const cli::Config& c) {
  const auto log_path = opt(c, "log");
  const auto manifest_path = opt(c, "manifest");
  if (!log_path || !manifest_path) return make_error(Errc::invalid_argument, "--log and --manifest are required");
  auto manifest = load_manifest(*manifest_path);
  if (!manifest) return manifest.error();
  auto contents = read_log(*log_path);
  if (!contents) return contents.error();
  if (contents->torn_tail) std::cerr << "note: ignoring a torn final record\n";
  return replay(contents->events, *manifest);
}

int log_replay(const cli::Config& c) {
  auto r = replay_from(c);
  if (!r) return fail(r.error(), r.code() == Errc::invalid_argument ? kUsage : kFailed);
  std::cout << json{{"records", r->summary.records}, {"state", r->state}}.dump(2) << "\n";
  return kOk;
}

int log_summarize(const cli::Config& c) {
  auto r = replay_from(c);
  if (!r) return fail(r.error(), r.code() == Errc::invalid_argument ? kUsage : kFailed);
  json j = to_json(r->summary);
  j["final_state"] = r->state;
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative lecture playback: registry, peers, simulator and log tools"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file [env CLIMANIC_CONFIG]");
  app.add_flag("--print-config", g.print_config, "Print the effective settings as JSON and exit");

  std::vector<std::unique_ptr<Command>> commands;
  std::map<CLI::App*, std::pair<Command*, int (*)(const cli::Config&)>> leaves;
  const auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& desc,
                        int (*fn)(const cli::Config&)) {
    auto* sub = parent->add_subcommand(name, desc);
    sub->fallthrough();
    commands.push_back(std::make_unique<Command>());
    commands.back()->path = parent->get_name() + " " + name;
    leaves[sub] = {commands.back().get(), fn};
    return std::pair{sub, commands.back().get()};
  };

  auto* registry = app.add_subcommand("registry", "Group registry service");
  registry->require_subcommand(1);
  registry->fallthrough();
  {
    auto [s, c] = leaf(registry, "serve", "Run the registry", registry_serve);
    declare(s, *c, "listen", "CLIMANIC_REGISTRY_LISTEN", "127.0.0.1:7400", "Address to serve on");
    declare(s, *c, "courses", "CLIMANIC_COURSES", std::nullopt, "Course catalog file");
    declare(s, *c, "data-dir", "CLIMANIC_DATA_DIR", "registry-data", "Snapshot and log directory");
    declare(s, *c, "snapshot-every", "", "1000", "Compact after this many log records");
    declare(s, *c, "fsync", "", "false", "fsync every log record (true/false)");
  }
  {
    auto [s, c] = leaf(registry, "list", "List a course's active groups", [](const cli::Config& cfg) {
      const auto course = opt(cfg, "course");
      if (!course) return usage("--course is required");
      return registry_call(cfg, registry_proto::list_active_groups(1, *course));
    });
    declare(s, *c, "registry", "CLIMANIC_REGISTRY", "127.0.0.1:7400", "Registry address");
    declare(s, *c, "course", "", std::nullopt, "Course id");
  }
  {
    auto [s, c] = leaf(registry, "members", "Show a group's members", [](const cli::Config& cfg) {
      const auto group = opt(cfg, "group");
      if (!group) return usage("--group is required");
      auto gid = GroupId::parse(*group);
      if (!gid) return fail(gid.error(), kUsage);
      return registry_call(cfg, registry_proto::get_members(1, *gid));
    });
    declare(s, *c, "registry", "CLIMANIC_REGISTRY", "127.0.0.1:7400", "Registry address");
    declare(s, *c, "group", "", std::nullopt, "Group id (32 hex characters)");
  }

  auto* peer = app.add_subcommand("peer", "Session peer");
  peer->require_subcommand(1);
  peer->fallthrough();
  {
    auto [s, c] = leaf(peer, "run", "Join or create a group and stay in the session", peer_run);
    declare(s, *c, "registry", "CLIMANIC_REGISTRY", "127.0.0.1:7400", "Registry address");
    declare(s, *c, "group", "", std::nullopt, "Group to join");
    declare(s, *c, "create", "", std::nullopt, "Create a group for this course instead");
    declare(s, *c, "name", "CLIMANIC_NAME", std::nullopt, "Participant name");
    declare(s, *c, "manifest", "CLIMANIC_MANIFEST", std::nullopt, "Courseware manifest");
    declare(s, *c, "listen", "CLIMANIC_LISTEN", "127.0.0.1:0", "Address other peers reach this one on");
    declare(s, *c, "ui-listen", "CLIMANIC_UI_LISTEN", "127.0.0.1:7480", "UI gateway address (live mode)");
    declare(s, *c, "headless", "", std::nullopt, "Run this command script instead of serving the UI");
    declare(s, *c, "linger-ms", "", "3000", "Headless: keep running this long after the script ends");
    declare(s, *c, "log", "CLIMANIC_LOG", std::nullopt, "Event log file");
  }

  auto* simc = app.add_subcommand("sim", "Deterministic simulator");
  simc->require_subcommand(1);
  simc->fallthrough();
  {
    auto [s, c] = leaf(simc, "run", "Run one seed of a scenario", sim_run);
    declare(s, *c, "scenario", "", std::nullopt, "Scenario file");
    declare(s, *c, "seed", "", "1", "Seed");
    declare(s, *c, "trace-out", "", std::nullopt, "Write the trace here when a check fails");
  }
  {
    auto [s, c] = leaf(simc, "sweep", "Run a range of seeds", sim_sweep);
    declare(s, *c, "scenario", "", std::nullopt, "Scenario file");
    declare(s, *c, "seeds", "", "1..100", "Seed range a..b");
    declare(s, *c, "trace-out", "", std::nullopt, "Write the first failing seed's trace here");
  }

  auto* logc = app.add_subcommand("log", "Event log tools");
  logc->require_subcommand(1);
  logc->fallthrough();
  for (auto [name, desc, fn] : {std::tuple{"replay", "Replay a log to its terminal state", log_replay},
                                std::tuple{"summarize", "Navigation report for a log", log_summarize}}) {
    auto [s, c] = leaf(logc, name, desc, fn);
    declare(s, *c, "log", "", std::nullopt, "Event log file");
    declare(s, *c, "manifest", "CLIMANIC_MANIFEST", std::nullopt, "Courseware manifest");
  }

  // Scenario paths may also be given positionally.
  std::optional<std::string> positional;
  for (auto& [sub, entry] : leaves) {
    if (entry.first->flags.count("scenario")) sub->add_option("scenario_path", positional, "Scenario file");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  for (auto& [sub, entry] : leaves) {
    if (!sub->parsed()) continue;
    auto& [cmd, fn] = entry;
    if (positional && !cmd->flags.at("scenario")) cmd->flags["scenario"] = positional;
    auto cfg = resolve(*cmd, g);
    if (!cfg) return kUsage;
    if (g.print_config) {
      std::cout << cfg->print() << "\n";
      return kOk;
    }
    try {
      return fn(*cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kFailed;
    }
  }
  return kUsage;
}
