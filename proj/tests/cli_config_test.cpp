#include <unistd.h>

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "climanic/cli/config.hpp"

namespace climanic::cli {
namespace {

using nlohmann::json;

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

TEST(CliConfig, Precedence) {
  const Setting s{"registry", "CLIMANIC_REGISTRY", "127.0.0.1:7400"};
  const json file{{"registry", "file:1"}};
  {
    Config c(file, fake_env({{"CLIMANIC_REGISTRY", "env:1"}}));
    EXPECT_EQ(c.resolve(s, "flag:1").value, "flag:1");
    EXPECT_EQ(c.get("registry").source, "flag");
  }
  {
    Config c(file, fake_env({{"CLIMANIC_REGISTRY", "env:1"}}));
    EXPECT_EQ(c.resolve(s, std::nullopt).value, "env:1");
  }
  {
    Config c(file, fake_env({}));
    EXPECT_EQ(c.resolve(s, std::nullopt).value, "file:1");
    EXPECT_EQ(c.get("registry").source, "config");
  }
  {
    Config c(json::object(), fake_env({}));
    EXPECT_EQ(c.resolve(s, std::nullopt).value, "127.0.0.1:7400");
    EXPECT_EQ(c.resolve(Setting{"name", "", std::nullopt}, std::nullopt).source, "unset");
  }
}

TEST(CliConfig, NumbersFromFileBecomeText) {
  Config c(json{{"seed", 42}}, fake_env({}));
  EXPECT_EQ(c.resolve(Setting{"seed", "", "1"}, std::nullopt).value, "42");
}

TEST(CliConfig, PrintIsDeterministic) {
  auto build = [](bool reverse) {
    Config c(json::object(), fake_env({}));
    std::vector<Setting> s = {{"zeta", "", "1"}, {"alpha", "", "2"}, {"mid", "", std::nullopt}};
    if (reverse) std::reverse(s.begin(), s.end());
    for (const auto& x : s) c.resolve(x, std::nullopt);
    return c.print();
  };
  EXPECT_EQ(build(false), build(true));
  const auto j = json::parse(build(false));
  EXPECT_EQ(j.begin().key(), "alpha");
  EXPECT_EQ(j.at("mid").at("value"), nullptr);
}

TEST(CliConfig, FileSections) {
  const auto path = std::filesystem::temp_directory_path() / ("climanic-cfg-" + std::to_string(::getpid()) + ".json");
  std::ofstream(path) << R"({"peer run": {"name": "alice"}, "sim run": 3})";
  auto peer = load_config_section(path.string(), "peer run");
  ASSERT_TRUE(peer.ok());
  EXPECT_EQ(peer->at("name"), "alice");
  auto none = load_config_section(path.string(), "registry serve");
  ASSERT_TRUE(none.ok());
  EXPECT_TRUE(none->empty());
  EXPECT_FALSE(load_config_section(path.string(), "sim run").ok());
  EXPECT_FALSE(load_config_section("/nonexistent.json", "x").ok());
  std::ofstream(path) << "not json";
  EXPECT_FALSE(load_config_section(path.string(), "peer run").ok());
}

}  // namespace
}  // namespace climanic::cli
