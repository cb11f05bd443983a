#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "townsim/decision.hpp"
#include "townsim/economy.hpp"
#include "townsim/events.hpp"
#include "townsim/memory.hpp"
#include "townsim/world.hpp"

namespace townsim {

// Final per-agent tallies; parallel and deterministic runs of the same seed
// must agree on every field here (event interleaving may differ).
struct AgentFinal {
  std::string name;
  std::string position;
  NeedsState needs;
  int meals_eaten = 0;
  int meals_skipped = 0;
  int conversations = 0;
  int purchases = 0;
  Cents total_income = 0;
  Cents total_spent = 0;

  bool operator==(const AgentFinal&) const = default;
};

// One needs snapshot per agent per simulated tick (capture_trace only).
struct TraceRow {
  int day = 1;
  int tick = 0;
  std::string agent;
  std::string position;
  int energy = 0;
  int grocery = 0;
  Cents money = 0;

  bool operator==(const TraceRow&) const = default;
};

struct RunOptions {
  std::optional<RunMode> mode;          // overrides scenario sim.mode
  std::optional<std::uint64_t> seed;    // overrides sim.seed
  std::optional<int> days;              // overrides sim.days
  bool no_discounts = false;            // strip every discount window first
  bool capture_trace = false;
  std::vector<Commitment> initial_commitments;  // ids are reassigned
  std::string transcript_path;          // remote backend prompt/response JSONL
};

struct RunResult {
  std::string scenario_name;
  std::uint64_t seed = 0;
  RunMode mode = RunMode::deterministic;
  std::string backend_name;
  int days = 0;
  int ticks_per_day = 24;
  std::vector<Event> events;
  std::map<std::string, AgentFinal> finals;
  std::vector<Commitment> commitments;
  std::map<std::string, Cents> shop_revenue;
  // Shop -> days (within the run) on which it had an active discount window.
  std::map<std::string, std::vector<int>> discount_days;
  std::vector<TraceRow> trace;
};

// A world-state consistency check failed; carries recent events for diagnosis.
class EngineInvariantError : public std::runtime_error {
 public:
  EngineInvariantError(const std::string& message, std::vector<Event> recent);
  const std::vector<Event>& recent_events() const { return recent_; }

 private:
  std::vector<Event> recent_;
};

// The decision backend became unusable mid-run; partial events are preserved
// so the caller can flush them before exiting.
class EngineAbort : public std::runtime_error {
 public:
  EngineAbort(const std::string& reason, std::vector<Event> partial);
  const std::vector<Event>& partial_events() const { return partial_; }

 private:
  std::vector<Event> partial_;
};

// Runs the simulation with a backend constructed from the scenario
// (oracle or remote, per sim.backend).
RunResult run_simulation(const Scenario& scenario, const RunOptions& options = {});

// Runs with an injected backend (tests use stubs here).
RunResult run_simulation(const Scenario& scenario, DecisionBackend& backend,
                         const RunOptions& options = {});

}  // namespace townsim
