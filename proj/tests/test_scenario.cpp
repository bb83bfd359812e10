#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "distgap/runner.hpp"

using namespace distgap;
using nlohmann::json;

namespace {

const char* kBase = R"(# Four agents on a ring.
name = "ring_small"
seed = 5

[problem]
n = 4

[problem.G]
kind = "pairwise"
own = { atom = "quadratic", scale = 1.0 }
pair = { atom = "quadratic", scale = 1.0 }
graph = { kind = "ring", m = 2 }

[initial]
kind = "dirac"
mean = [0.0]

[solver.grid]
points = 161
steps = 160
)";

Scenario scenario(const std::string& experiments) { return validate_scenario(toml::parse(kBase + experiments)); }

const std::string kSmallness = "\n[[experiments]]\nkind = \"SmallnessCheck\"\n";
const std::string kHetero = "\n[[experiments]]\nkind = \"HeteroSweep\"\nparams = { m = [2] }\n";

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::InvalidArgument;
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("distgap-test-" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Toml, RoundTripsThroughDump) {
  const json tree = {{"name", "a \"quoted\" name\twith tab"},
                     {"count", 3},
                     {"ratio", 0.1},
                     {"big", 1e-300},
                     {"flag", false},
                     {"list", {1.5, -2.0, 3.25}},
                     {"matrix", {{1.0, 0.0}, {0.0, 1.0}}},
                     {"nested", {{"inner", {{"x", 1}, {"dotted.key", "v"}}}}},
                     {"rows", {{{"kind", "A"}, {"p", {{"m", {2, 4}}}}}, {{"kind", "B"}}}}};
  EXPECT_EQ(toml::parse(toml::dump(tree)), tree);
}

TEST(Toml, ParsesCommentsAndInlineTables) {
  const json j = toml::parse("a = 1 # note\n[t]\nb = { c = [1, 2], d = \"x#y\" }\n");
  EXPECT_EQ(j["a"], 1);
  EXPECT_EQ(j["t"]["b"]["c"], json({1, 2}));
  EXPECT_EQ(j["t"]["b"]["d"], "x#y");
}

TEST(Schema, UnknownKeysAreRejected) {
  EXPECT_EQ(code_of([] { validate_scenario(toml::parse(std::string(kBase) + "\n[solver.mc]\nparticels = 10\n")); }),
            Errc::SchemaError);
  EXPECT_EQ(code_of([] { validate_scenario(toml::parse(std::string(kBase) + "colour = 1\n")); }), Errc::SchemaError);
  EXPECT_EQ(code_of([] { scenario("\n[[experiments]]\nkind = \"Nonsense\"\n"); }), Errc::SchemaError);
}

TEST(Schema, EchoReadsBackToTheSameScenario) {
  const Scenario s = scenario(kSmallness + kHetero);
  const Scenario r = validate_scenario(toml::parse(s.echo()));
  EXPECT_EQ(r.tree, s.tree);
  EXPECT_EQ(r.hash(), s.hash());
}

TEST(Schema, DefaultsAreSpelledOut) {
  const Scenario s = scenario("");
  EXPECT_EQ(s.problem()["T"], 1.0);
  EXPECT_EQ(s.problem()["d"], 1);
  EXPECT_TRUE(s.experiments().empty());
}

TEST(Run, EmptyExperimentListWritesOnlyTheConfig) {
  const auto dir = scratch("empty");
  const auto r = run_scenario(scenario(""), {dir.string(), nullptr});
  EXPECT_TRUE(r.experiments.empty());
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(r.directory)) files.push_back(e.path().filename().string());
  EXPECT_EQ(files, std::vector<std::string>{"config.toml"});
  std::filesystem::remove_all(dir);
}

TEST(Run, ContentHashIsStableAndOrderFree) {
  const auto a = run_scenario(scenario(kSmallness + kHetero));
  const auto b = run_scenario(scenario(kSmallness + kHetero));
  const auto c = run_scenario(scenario(kHetero + kSmallness));
  EXPECT_EQ(a.content_hash, b.content_hash);
  EXPECT_EQ(a.content_hash, c.content_hash);
  EXPECT_NE(a.config_hash, c.config_hash);
  const auto d = run_scenario(scenario(kSmallness));
  EXPECT_NE(a.content_hash, d.content_hash);
}

TEST(Run, WritesReportsAndTables) {
  const auto dir = scratch("full");
  const auto r = run_scenario(scenario(kSmallness + kHetero), {dir.string(), nullptr});
  for (const char* f : {"config.toml", "reports.json", "HASH", "run.log"})
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(r.directory) / f)) << f;
  std::ifstream in(std::filesystem::path(r.directory) / "reports.json");
  const json rep = json::parse(in);
  EXPECT_EQ(rep["content_hash"], r.content_hash);
  EXPECT_EQ(rep["experiments"].size(), 2u);
  std::filesystem::remove_all(dir);
}

TEST(Sweep, RejectsBadPaths) {
  const Scenario s = scenario(kSmallness);
  EXPECT_EQ(code_of([&] { with_parameter(s, "problem.nope", "1"); }), Errc::BadParameterPath);
  EXPECT_EQ(code_of([&] { with_parameter(s, "problem", "1"); }), Errc::BadParameterPath);
  EXPECT_EQ(code_of([&] { with_parameter(s, "problem.T", "fast"); }), Errc::BadParameterPath);
  EXPECT_EQ(code_of([&] { with_parameter(s, "initial.agents.9.mean.0", "1"); }), Errc::BadParameterPath);
  EXPECT_EQ(code_of([&] { sweep(s, "problem.T", {}); }), Errc::BadParameterPath);
}

TEST(Sweep, SingleValueMatchesDirectRun) {
  const Scenario s = scenario(kSmallness);
  const auto sw = sweep(s, "problem.T", {"1.5"});
  const auto direct = run_scenario(with_parameter(s, "problem.T", "1.5"));
  ASSERT_EQ(sw.runs.size(), 1u);
  EXPECT_EQ(sw.runs[0].content_hash, direct.content_hash);
  EXPECT_EQ(sw.runs[0].config_hash, direct.config_hash);
  EXPECT_EQ(with_parameter(s, "problem.T", "1.5").problem()["T"], 1.5);
}

TEST(Csv, QuotesPerRfc4180) {
  CsvTable t;
  t.header = {"a", "b,c"};
  t.rows = {{"plain", "say \"hi\""}, {"two\nlines", ""}};
  EXPECT_EQ(t.str(), "a,\"b,c\"\r\nplain,\"say \"\"hi\"\"\"\r\n\"two\nlines\",\r\n");
}

TEST(Csv, NumbersReadBackExactly) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345678.9})
    EXPECT_EQ(std::stod(fmt(v)), v);
}

TEST(Bundled, EveryScenarioValidates) {
  int seen = 0;
  for (const auto& e : std::filesystem::directory_iterator(DISTGAP_SCENARIOS)) {
    if (e.path().extension() != ".toml") continue;
    const Scenario s = load_scenario(e.path().string());
    EXPECT_FALSE(s.experiments().empty()) << e.path();
    EXPECT_EQ(validate_scenario(toml::parse(s.echo())).tree, s.tree) << e.path();
    ++seen;
  }
  EXPECT_GE(seen, 9);
}
