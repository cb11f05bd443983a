// townsim command-line entry point: run simulations, lint scenarios, refold
// saved event logs through analytics, and compare baseline/treated runs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "townsim/analytics.hpp"
#include "townsim/engine.hpp"
#include "townsim/llm_client.hpp"
#include "townsim/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitScenario = 2;
constexpr int kExitBackend = 3;

struct RunArgs {
  std::string scenario;
  std::string backend;  // empty = scenario value
  std::string mode;     // empty = scenario value
  std::optional<std::uint64_t> seed;
  std::optional<int> days;
  std::string out = "out";
  bool no_discounts = false;
  bool verbose = false;
};

struct ValidateArgs {
  std::string scenario;
};

struct ReplayArgs {
  std::string log;
  std::string out = "replay_out";
  int days = 0;  // 0 = infer from the log
};

struct CompareArgs {
  std::string baseline;
  std::string treated;
  std::string out = "compare_out";
  std::string focus;  // empty = infer from the treated summary
  double tolerance = 0.10;
  bool verbose = false;
};

int cmd_run(const RunArgs& args) {
  townsim::Scenario scenario;
  try {
    scenario = townsim::load_scenario(args.scenario);
  } catch (const townsim::ScenarioError& e) {
    std::cerr << "scenario invalid: " << e.what() << "\n";
    return kExitScenario;
  } catch (const std::exception& e) {
    std::cerr << "cannot load scenario: " << e.what() << "\n";
    return kExitScenario;
  }

  if (args.backend == "oracle") scenario.sim.backend = townsim::BackendKind::oracle;
  if (args.backend == "remote") scenario.sim.backend = townsim::BackendKind::remote;

  townsim::RunOptions options;
  if (args.mode == "deterministic") options.mode = townsim::RunMode::deterministic;
  if (args.mode == "parallel") options.mode = townsim::RunMode::parallel;
  options.seed = args.seed;
  options.days = args.days;
  options.no_discounts = args.no_discounts;

  const fs::path out_dir(args.out);
  if (scenario.sim.backend == townsim::BackendKind::remote) {
    const townsim::LlmConfig cfg =
        townsim::RemoteLlmBackend::with_env_overrides(scenario.sim.llm);
    if (cfg.endpoint.empty()) {
      std::cerr << "remote backend has no endpoint: set TOWNSIM_LLM_ENDPOINT "
                   "(or sim.llm.endpoint in the scenario)\n";
      return kExitBackend;
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    options.transcript_path = (out_dir / "transcripts.jsonl").string();
    std::ofstream(options.transcript_path, std::ios::trunc);  // fresh transcript
  }

  try {
    const townsim::RunResult result = townsim::run_simulation(scenario, options);
    townsim::write_run_reports(out_dir, result);
    if (args.verbose) {
      std::cerr << "run complete: scenario '" << result.scenario_name << "', seed "
                << result.seed << ", " << result.days << " days, " << result.events.size()
                << " events -> " << out_dir.string() << "\n";
    }
    return kExitOk;
  } catch (const townsim::EngineAbort& e) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    townsim::write_events_jsonl(e.partial_events(), out_dir / "events.jsonl");
    std::cerr << "backend failure: " << e.what() << " (partial event log flushed to "
              << (out_dir / "events.jsonl").string() << ")\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitBackend;
  }
}

int cmd_validate(const ValidateArgs& args) {
  try {
    const townsim::Scenario s = townsim::load_scenario(args.scenario);
    std::cout << "scenario OK: " << s.agents.size() << " agents, "
              << s.map.locations.size() << " locations, " << s.map.shops.size()
              << " shops, " << s.sim.days << " days\n";
    return kExitOk;
  } catch (const townsim::ScenarioError& e) {
    std::cerr << "scenario invalid: " << e.what() << "\n";
    return kExitScenario;
  } catch (const std::exception& e) {
    std::cerr << "cannot load scenario: " << e.what() << "\n";
    return kExitScenario;
  }
}

int cmd_replay(const ReplayArgs& args) {
  std::vector<townsim::Event> events;
  try {
    events = townsim::read_events_jsonl(args.log);
  } catch (const std::exception& e) {
    std::cerr << "cannot read event log: " << e.what() << "\n";
    return kExitUsage;
  }
  townsim::write_event_reports(args.out, events, args.days);
  return kExitOk;
}

json read_summary(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw std::runtime_error("missing " + (dir / "summary.json").string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw std::runtime_error("malformed " + (dir / "summary.json").string());
  }
  return j;
}

int cmd_compare(const CompareArgs& args) {
  std::vector<townsim::Event> baseline_events, treated_events;
  json baseline_summary, treated_summary;
  try {
    baseline_events = townsim::read_events_jsonl(fs::path(args.baseline) / "events.jsonl");
    treated_events = townsim::read_events_jsonl(fs::path(args.treated) / "events.jsonl");
    baseline_summary = read_summary(args.baseline);
    treated_summary = read_summary(args.treated);
  } catch (const std::exception& e) {
    std::cerr << "cannot read run directory: " << e.what() << "\n";
    return kExitUsage;
  }

  const int baseline_days = baseline_summary.value("days", 0);
  const int treated_days = treated_summary.value("days", 0);
  if (baseline_days != treated_days) {
    std::cerr << "day counts differ: baseline ran " << baseline_days << " days, treated ran "
              << treated_days << "\n";
    return kExitUsage;
  }

  std::string focus = args.focus;
  std::vector<int> discount_days;
  const json discounts = treated_summary.value("discount_days", json::object());
  if (focus.empty()) {
    if (discounts.size() == 1) {
      focus = discounts.begin().key();
    } else if (discounts.empty()) {
      std::cerr << "treated run has no discounted shop; pass --focus\n";
      return kExitUsage;
    } else {
      std::cerr << "treated run discounts " << discounts.size()
                << " shops; pass --focus to pick one\n";
      return kExitUsage;
    }
  }
  if (discounts.contains(focus)) {
    discount_days = discounts[focus].get<std::vector<int>>();
  }

  const townsim::DailySales baseline = townsim::daily_sales(baseline_events, baseline_days);
  const townsim::DailySales treated = townsim::daily_sales(treated_events, treated_days);
  const townsim::SubstitutionReport report =
      townsim::substitution_report(baseline, treated, focus, discount_days, args.tolerance);
  townsim::write_comparison_reports(args.out, report);

  std::cout << "focus shop: " << report.focus_shop << "\n"
            << "total food spend: " << townsim::format_money(report.baseline_total) << " -> "
            << townsim::format_money(report.treated_total) << " ("
            << (report.relative_total_change >= 0 ? "+" : "")
            << report.relative_total_change * 100.0 << "%)\n"
            << "substitution dominant: " << (report.substitution_dominant ? "yes" : "no")
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"townsim: needs-driven multi-agent town simulator"};
  app.set_version_flag("--version", "townsim 0.1.0");
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "Run a simulation; write the event log and reports");
  run->add_option("--scenario", run_args.scenario, "Scenario JSON file")->required();
  run->add_option("--backend", run_args.backend, "Decision backend")
      ->check(CLI::IsMember({"oracle", "remote"}));
  run->add_option("--mode", run_args.mode, "Tick scheduling mode")
      ->check(CLI::IsMember({"deterministic", "parallel"}));
  std::uint64_t seed_value = 0;
  CLI::Option* seed_opt = run->add_option("--seed", seed_value, "RNG seed override");
  int days_value = 0;
  CLI::Option* days_opt =
      run->add_option("--days", days_value, "Days override")->check(CLI::NonNegativeNumber);
  run->add_option("--out", run_args.out, "Output directory (default: out)");
  run->add_flag("--no-discounts", run_args.no_discounts,
                "Strip every discount window (baseline arm)");
  run->add_flag("-v,--verbose", run_args.verbose, "Progress summary on stderr");

  ValidateArgs validate_args;
  CLI::App* validate = app.add_subcommand("validate", "Lint a scenario file");
  validate->add_option("--scenario", validate_args.scenario, "Scenario JSON file")->required();

  ReplayArgs replay_args;
  CLI::App* replay =
      app.add_subcommand("replay", "Recompute analytics reports from a saved event log");
  replay->add_option("--log", replay_args.log, "events.jsonl file")->required();
  replay->add_option("--out", replay_args.out, "Output directory (default: replay_out)");
  replay->add_option("--days", replay_args.days, "Day count (default: inferred from the log)")
      ->check(CLI::NonNegativeNumber);

  CompareArgs compare_args;
  CLI::App* compare =
      app.add_subcommand("compare", "Baseline-vs-treated substitution report");
  compare->add_option("--baseline", compare_args.baseline, "Baseline run directory")->required();
  compare->add_option("--treated", compare_args.treated, "Treated run directory")->required();
  compare->add_option("--out", compare_args.out, "Output directory (default: compare_out)");
  compare->add_option("--focus", compare_args.focus,
                      "Focus shop (default: the treated run's discounted shop)");
  compare->add_option("--tolerance", compare_args.tolerance,
                      "Substitution band for the total-market change (default 0.10)");
  compare->add_flag("-v,--verbose", compare_args.verbose, "Verbose output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  if (seed_opt->count() > 0) run_args.seed = seed_value;
  if (days_opt->count() > 0) run_args.days = days_value;

  if (app.got_subcommand(run)) return cmd_run(run_args);
  if (app.got_subcommand(validate)) return cmd_validate(validate_args);
  if (app.got_subcommand(replay)) return cmd_replay(replay_args);
  if (app.got_subcommand(compare)) return cmd_compare(compare_args);
  return kExitUsage;
}
