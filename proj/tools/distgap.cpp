// Command-line runner for scenario files.
//
//   distgap run <scenario.toml> [--out dir] [--seed N]
//   distgap sweep <scenario.toml> --axis <path> --values a,b,c [--out dir] [--jobs N]
//   distgap validate <scenario.toml>
//
// Exit status: 0 when every verdict is Holds or HoldsWithinCI, 2 when any is
// Violated, 1 on error.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "distgap/runner.hpp"

namespace {

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

void print_summary(const distgap::RunResult& r) {
  for (const auto& e : r.experiments)
    for (const auto& rep : e.reports)
      std::cout << distgap::experiment_name(e.kind) << "  " << rep.theorem << "  gap " << distgap::fmt(rep.gap.value)
                << " +- " << distgap::fmt(rep.gap.stderr_) << "  bound " << distgap::fmt(rep.bound) << "  "
                << distgap::verdict_name(rep.verdict) << "\n";
  std::cout << "content hash " << r.content_hash << "\n";
  if (!r.directory.empty()) std::cout << "run directory " << r.directory << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed versus full-information control experiments"};
  app.require_subcommand(1);

  std::string path, out = "runs", axis, values;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run every experiment of a scenario");
  run->add_option("scenario", path, "Scenario TOML file")->required();
  run->add_option("--out", out, "Directory that receives the run directory")->capture_default_str();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_flag("--quiet", quiet, "Do not echo the log");

  auto* sw = app.add_subcommand("sweep", "Re-run a scenario over values of one parameter");
  sw->add_option("scenario", path, "Scenario TOML file")->required();
  sw->add_option("--axis", axis, "Dotted parameter path, e.g. problem.G.graph.m")->required();
  sw->add_option("--values", values, "Comma separated values")->required();
  sw->add_option("--out", out, "Directory that receives the sweep")->capture_default_str();
  sw->add_option("--jobs", jobs, "Values run concurrently")->capture_default_str();
  sw->add_flag("--quiet", quiet, "Do not echo the log");

  auto* val = app.add_subcommand("validate", "Check a scenario against the schema");
  val->add_option("scenario", path, "Scenario TOML file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    distgap::Scenario s = distgap::load_scenario(path);
    if (seed) {
      distgap::json tree = s.tree;
      tree["seed"] = *seed;
      s = distgap::validate_scenario(tree, s.base_dir);
    }
    distgap::RunOptions opt;
    opt.out_dir = out;
    opt.echo = quiet ? nullptr : &std::cerr;

    if (*val) {
      std::cout << s.name() << ": valid, " << s.experiments().size() << " experiment(s), config hash " << s.hash()
                << "\n";
      return 0;
    }
    if (*run) {
      const auto r = distgap::run_scenario(s, opt);
      print_summary(r);
      return r.any_violated() ? 2 : 0;
    }
    const auto r = distgap::sweep(s, axis, split_values(values), opt, jobs);
    std::cout << r.table.str();
    return r.any_violated() ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
