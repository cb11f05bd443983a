#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "townsim/money.hpp"

namespace townsim {

// ---------------------------------------------------------------------------
// Geometry and time
// ---------------------------------------------------------------------------

struct GridCoord {
  int x = 0;
  int y = 0;
  bool operator==(const GridCoord&) const = default;
};

inline int manhattan(GridCoord a, GridCoord b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

// Days are 1-based; tick is the hour-of-day in [0, ticks_per_day).
// Day 0 (or negative) timestamps are allowed on seeded memories only and mean
// "before the simulation started".
struct SimTime {
  int day = 1;
  int tick = 0;
  bool operator==(const SimTime&) const = default;
  auto operator<=>(const SimTime&) const = default;
};

inline long long to_ticks(SimTime t, int ticks_per_day) {
  return static_cast<long long>(t.day) * ticks_per_day + t.tick;
}

// ---------------------------------------------------------------------------
// Locations and shops
// ---------------------------------------------------------------------------

enum class LocationKind { residence, dining, grocery, workplace, leisure };

std::string to_string(LocationKind k);
LocationKind location_kind_from_string(const std::string& s);

struct Location {
  std::string name;
  GridCoord coord;
  LocationKind kind = LocationKind::leisure;
  std::optional<int> capacity;  // absent = unlimited
  bool operator==(const Location&) const = default;
};

struct MenuItem {
  std::string name;
  Cents base_price = 0;
  int energy_restore = 0;   // applied to the buyer's energy, clamped to [0,100]
  int grocery_restore = 0;  // >0 marks pantry stock (grocery bundles)
  bool operator==(const MenuItem&) const = default;
};

// A discount is active on days in [start_day, end_day] inclusive and applies
// either to every item ("all") or to a single named item.
struct DiscountWindow {
  int start_day = 0;
  int end_day = 0;
  double rate = 0.0;  // fraction in [0,1): 20% == 0.20
  std::string applies_to = "all";
  bool operator==(const DiscountWindow&) const = default;

  bool active_on(int day) const { return day >= start_day && day <= end_day; }
  bool covers(const std::string& item) const {
    return applies_to == "all" || applies_to == item;
  }
};

struct Shop {
  std::string location;  // name of the Location this shop occupies
  LocationKind kind = LocationKind::dining;  // dining or grocery
  std::vector<MenuItem> menu;
  std::vector<DiscountWindow> discounts;
  int open_tick = 0;    // open on ticks in [open_tick, close_tick)
  int close_tick = 24;
  bool operator==(const Shop&) const = default;

  bool open_at(int tick) const { return tick >= open_tick && tick < close_tick; }
  const MenuItem* find_item(const std::string& name) const;
};

struct TownMap {
  std::map<std::string, Location> locations;
  std::map<std::string, Shop> shops;  // keyed by location name
  std::vector<GridCoord> travel_paths;
  bool operator==(const TownMap&) const = default;

  bool has(const std::string& name) const { return locations.count(name) != 0; }
  const Location& location(const std::string& name) const;  // throws UnknownLocation
  const Shop* shop_at(const std::string& name) const;       // nullptr if none
};

struct UnknownLocation : std::runtime_error {
  explicit UnknownLocation(const std::string& name)
      : std::runtime_error("unknown location: " + name) {}
};

// Grid distance between two named locations. The town's walkable corridor is
// the Manhattan metric over the grid; travel_paths waypoints never shorten a
// route below it, so the shortest waypoint route equals manhattan().
// Throws UnknownLocation on unknown names.
int travel_distance(const TownMap& map, const std::string& from, const std::string& to);

// ---------------------------------------------------------------------------
// Personas
// ---------------------------------------------------------------------------

enum class IncomeKind { hourly, monthly, business_owner };

std::string to_string(IncomeKind k);
IncomeKind income_kind_from_string(const std::string& s);

// Pre-run memory used to seed habits and relationships context. `day` may be
// zero or negative (before the run).
struct SeedMemory {
  std::string kind = "event";  // event|reflection|conversation|purchase
  int day = 0;
  int tick = 0;
  std::string content;
  std::string location;  // purchase seeds: the shop visited
  bool operator==(const SeedMemory&) const = default;
};

struct Persona {
  std::string name;
  int age = 30;
  std::string occupation;
  IncomeKind income_kind = IncomeKind::hourly;
  Cents income_amount = 0;  // hourly: per work tick; monthly: lump per payday
  std::string residence;
  std::optional<std::string> workplace;
  int work_start = 9;
  int work_end = 17;  // works ticks in [work_start, work_end)
  double deal_proneness = 0.5;  // in [0,1]
  std::map<std::string, double> relationships;  // other agent -> proximity [0,1]
  std::vector<std::string> preferences;
  Cents start_money = 20000;
  int start_energy = 100;
  int start_grocery = 60;
  std::vector<SeedMemory> seed_memories;
  bool operator==(const Persona&) const = default;
};

// ---------------------------------------------------------------------------
// Simulation configuration
// ---------------------------------------------------------------------------

struct MealSlot {
  std::string name;    // breakfast/lunch/dinner
  int tick = 8;        // due from this tick until handled
  int min_energy = 10; // items below this restore value don't count as a meal
  bool operator==(const MealSlot&) const = default;
};

struct MemoryConfig {
  int half_life_ticks = 24;
  double w_time = 0.6;
  double w_rel = 0.4;
  int top_k = 10;
  int hard_horizon_ticks = 0;  // 0 = no horizon
  bool operator==(const MemoryConfig&) const = default;
};

struct LlmConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/chat/completions
  std::string api_key;
  std::string model = "default";
  double temperature = 0.2;
  int timeout_seconds = 30;
  int max_inflight = 4;
  int max_consecutive_failures = 5;  // after this many transport errors: abort
  bool operator==(const LlmConfig&) const = default;
};

struct SimConstants {
  int base_decay = 2;        // energy per awake tick
  int work_decay = 3;        // extra energy per work tick
  int travel_cost = 1;       // energy per grid unit
  int home_meal_energy = 30;
  int meal_grocery_cost = 25;
  int grocery_threshold = 30;   // below this a shopping need is flagged
  int emergency_threshold = 20; // at or below: forced dining context
  int conversation_min_energy = 25;
  int wake_tick = 7;
  int sleep_tick = 22;  // agents act on ticks in [wake_tick, sleep_tick)
  int monthly_payday_day = 1;
  int max_retries = 2;       // decision re-prompts before oracle fallback
  int habit_window_days = 7; // recent-visit window for the habit bonus
  double discount_bonus = 5.0;
  double distance_cost = 0.2;
  double habit_bonus = 0.5;
  double substitution_tolerance = 0.10;
  Cents home_meal_imputed_cost = 800;  // opportunity cost of pantry cooking
  std::vector<MealSlot> meal_slots{
      {"breakfast", 8, 10}, {"lunch", 12, 30}, {"dinner", 18, 30}};
  bool operator==(const SimConstants&) const = default;
};

enum class BackendKind { oracle, remote };
enum class RunMode { deterministic, parallel };

std::string to_string(BackendKind k);
std::string to_string(RunMode m);

struct SimConfig {
  int days = 7;
  int ticks_per_day = 24;
  std::uint64_t seed = 42;
  BackendKind backend = BackendKind::oracle;
  RunMode mode = RunMode::deterministic;
  SimConstants constants;
  MemoryConfig memory;
  LlmConfig llm;
  bool operator==(const SimConfig&) const = default;
};

struct Scenario {
  std::string name;
  TownMap map;
  std::vector<Persona> agents;
  SimConfig sim;
  bool operator==(const Scenario&) const = default;
};

// Raised on malformed or inconsistent scenario documents. key_path() names the
// offending key, e.g. "shops.Fried Chicken Shop.discounts[0].rate".
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::string key_path, const std::string& message)
      : std::runtime_error(key_path.empty() ? message : key_path + ": " + message),
        key_path_(std::move(key_path)) {}
  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

// Parses and validates a scenario document (JSON key/value tree with top-level
// sections map/shops/agents/sim). Location entries accept either the short
// form `"Name": [x, y]` (kind inferred from shops and persona references) or
// an object with coord/kind/capacity.
Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::filesystem::path& file);
std::string serialize_scenario(const Scenario& s);  // round-trips via parse_scenario

// Copy with every shop's discount list cleared (baseline arm of an A/B run).
Scenario scenario_without_discounts(Scenario s);

}  // namespace townsim
