#pragma once

// Shared fixtures and independent re-implementations ("oracles") used to
// cross-check production code. The oracles here are deliberately written
// from the observable contract, not by calling back into the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "townsim/economy.hpp"
#include "townsim/engine.hpp"
#include "townsim/events.hpp"
#include "townsim/memory.hpp"
#include "townsim/rng.hpp"
#include "townsim/world.hpp"

namespace support {

using namespace townsim;

inline std::filesystem::path scenario_dir() { return TOWNSIM_SCENARIO_DIR; }

inline const Scenario& reference_scenario() {
  static const Scenario s = load_scenario(scenario_dir() / "reference.json");
  return s;
}

// A deterministic little PRNG wrapper for fuzz loops.
class Rand {
 public:
  explicit Rand(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return state_ = splitmix64(state_); }
  // Uniform in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }
  int range(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }
  double unit() { return u01(next()); }
  bool chance(double p) { return unit() < p; }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[below(v.size())];
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Small programmatic town used by engine unit tests and fuzz runs
// ---------------------------------------------------------------------------

inline Scenario small_town() {
  Scenario s;
  s.name = "small-town";
  auto put = [&](const std::string& name, int x, int y, LocationKind kind) {
    Location loc;
    loc.name = name;
    loc.coord = {x, y};
    loc.kind = kind;
    s.map.locations[name] = loc;
  };
  put("North House", 0, 2, LocationKind::residence);
  put("South House", 0, -2, LocationKind::residence);
  put("Cafe", 1, 0, LocationKind::dining);
  put("Market", -1, 0, LocationKind::grocery);
  put("Mill", 3, 0, LocationKind::workplace);
  s.map.travel_paths = {{0, 0}};  // central crossing linking homes to shops

  Shop cafe;
  cafe.location = "Cafe";
  cafe.kind = LocationKind::dining;
  cafe.open_tick = 7;
  cafe.close_tick = 22;
  cafe.menu.push_back({"stew", 600, 35, 0});
  cafe.menu.push_back({"snack", 300, 10, 0});
  s.map.shops["Cafe"] = cafe;

  Shop market;
  market.location = "Market";
  market.kind = LocationKind::grocery;
  market.open_tick = 8;
  market.close_tick = 20;
  market.menu.push_back({"bundle", 1000, 0, 50});
  s.map.shops["Market"] = market;

  Persona ann;
  ann.name = "Ann";
  ann.occupation = "miller";
  ann.income_kind = IncomeKind::hourly;
  ann.income_amount = 1200;
  ann.residence = "North House";
  ann.workplace = "Mill";
  ann.work_start = 9;
  ann.work_end = 17;
  ann.deal_proneness = 0.5;
  ann.start_money = 15000;
  ann.relationships["Bob"] = 0.8;
  s.agents.push_back(ann);

  Persona bob;
  bob.name = "Bob";
  bob.occupation = "writer";
  bob.income_kind = IncomeKind::monthly;
  bob.income_amount = 200000;
  bob.residence = "South House";
  bob.deal_proneness = 0.5;
  bob.start_money = 10000;
  bob.relationships["Ann"] = 0.8;
  s.agents.push_back(bob);

  s.sim.days = 2;
  s.sim.seed = 7;
  return s;
}

// Randomized variant for invariant fuzzing: several agents spanning poor /
// low-energy / wealthy configurations in the small map.
inline Scenario fuzz_town(Rand& r) {
  Scenario s = small_town();
  s.name = "fuzz-town";
  s.agents.clear();
  const int n = r.range(2, 4);
  const std::vector<std::string> homes{"North House", "South House"};
  for (int i = 0; i < n; ++i) {
    Persona p;
    p.name = "Agent " + std::to_string(i + 1);
    p.residence = homes[static_cast<std::size_t>(i) % homes.size()];
    if (r.chance(0.6)) {
      p.workplace = "Mill";
      p.work_start = r.range(8, 10);
      p.work_end = p.work_start + r.range(4, 8);
    }
    p.income_kind = r.chance(0.5) ? IncomeKind::hourly : IncomeKind::monthly;
    p.income_amount = p.income_kind == IncomeKind::hourly ? r.range(0, 2000)
                                                          : r.range(0, 150000);
    p.deal_proneness = r.unit();
    p.start_money = r.range(0, 5000);        // poor enough to skip meals
    p.start_energy = r.range(5, 100);        // some start near collapse
    p.start_grocery = r.range(0, 60);
    for (int j = 0; j < i; ++j) {
      const double prox = r.unit();
      p.relationships["Agent " + std::to_string(j + 1)] = prox;
      s.agents[static_cast<std::size_t>(j)].relationships[p.name] = prox;
    }
    s.agents.push_back(p);
  }
  s.sim.days = r.range(1, 3);
  s.sim.seed = r.next();
  return s;
}

// ---------------------------------------------------------------------------
// Independent pricing oracle: exact decimal arithmetic on strings
// ---------------------------------------------------------------------------

// Computes base_cents * (1 - rate) rounded half-up, entirely with 128-bit
// integers over the rate's parts-per-million image. Written independently of
// economy.cpp; checked against pinned values below.
inline Cents price_oracle(Cents base, double rate) {
  const long long ppm = std::llround(rate * 1'000'000.0);
  const __int128 keep = 1'000'000 - ppm;
  const __int128 numer = static_cast<__int128>(base) * keep;
  // round half up on the positive axis
  return static_cast<Cents>((numer + 500'000) / 1'000'000);
}

// ---------------------------------------------------------------------------
// Independent distance oracle: Floyd–Warshall over locations + waypoints
// ---------------------------------------------------------------------------

// Models the walkable town as a dense graph whose nodes are every location
// and every travel waypoint, with edge weight = Manhattan distance. The
// shortest route in that graph is what travel_distance() promises.
inline std::map<std::pair<std::string, std::string>, int> distance_oracle(const TownMap& map) {
  std::vector<std::string> names;
  std::vector<GridCoord> pts;
  for (const auto& [name, loc] : map.locations) {
    names.push_back(name);
    pts.push_back(loc.coord);
  }
  for (std::size_t i = 0; i < map.travel_paths.size(); ++i) {
    names.push_back("#wp" + std::to_string(i));
    pts.push_back(map.travel_paths[i]);
  }
  const std::size_t n = pts.size();
  std::vector<std::vector<long long>> d(n, std::vector<long long>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      d[i][j] = std::abs(pts[i].x - pts[j].x) + std::abs(pts[i].y - pts[j].y);
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
      }
    }
  }
  std::map<std::pair<std::string, std::string>, int> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (names[i].starts_with("#wp") || names[j].starts_with("#wp")) continue;
      out[{names[i], names[j]}] = static_cast<int>(d[i][j]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Independent retrieval oracle: exhaustive score-and-sort
// ---------------------------------------------------------------------------

inline std::vector<MemoryEntry> retrieval_oracle(
    const std::vector<MemoryEntry>& entries, const std::string& owner,
    const RetrievalQuery& q, const MemoryConfig& cfg, int ticks_per_day,
    const std::map<std::string, double>& relationships) {
  struct Scored {
    double score;
    MemoryEntry entry;
  };
  const long long now = to_ticks(q.now, ticks_per_day);
  std::vector<Scored> scored;
  for (const MemoryEntry& e : entries) {
    const long long age = now - to_ticks(e.at, ticks_per_day);
    if (cfg.hard_horizon_ticks > 0 && age > cfg.hard_horizon_ticks) continue;
    const double time_part = age <= 0 ? 1.0 : std::exp2(-static_cast<double>(age) / cfg.half_life_ticks);
    double prox = 1.0;
    bool any_other = false;
    double best = 0.0;
    auto consider = [&](const std::string& who) {
      if (who.empty() || who == owner) return;
      any_other = true;
      double v = 0.0;
      for (const std::string& topic : q.topic_participants) {
        if (topic == who) v = 1.0;
      }
      auto it = relationships.find(who);
      if (it != relationships.end()) v = std::max(v, it->second);
      best = std::max(best, v);
    };
    consider(e.source_agent);
    for (const std::string& p : e.participants) consider(p);
    if (any_other) prox = best;
    scored.push_back({cfg.w_time * time_part + cfg.w_rel * prox, e});
  }
  std::stable_sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    const long long ta = to_ticks(a.entry.at, ticks_per_day);
    const long long tb = to_ticks(b.entry.at, ticks_per_day);
    if (ta != tb) return ta > tb;
    return a.entry.id > b.entry.id;
  });
  std::vector<MemoryEntry> out;
  const int limit = q.max_n < 0 ? 0 : q.max_n;
  for (const Scored& sc : scored) {
    if (static_cast<int>(out.size()) >= limit) break;
    out.push_back(sc.entry);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event-stream fold: per-agent cash ledger and needs-bounds audit
// ---------------------------------------------------------------------------

struct LedgerRow {
  Cents income = 0;
  Cents spent = 0;
};

// Recomputes income/spend per agent from raw events and audits every
// energy/money snapshot a payload carries.
inline std::map<std::string, LedgerRow> fold_ledger(const std::vector<Event>& events,
                                                    std::string* error) {
  std::map<std::string, LedgerRow> ledger;
  auto fail = [&](const std::string& msg, const Event& e) {
    if (error && error->empty()) {
      *error = msg + " (seq " + std::to_string(e.seq) + ")";
    }
  };
  for (const Event& e : events) {
    auto energy_ok = [&](const char* key) {
      if (!e.payload.contains(key)) return;
      const int v = e.payload[key].get<int>();
      if (v < 0 || v > 100) fail(std::string("energy out of bounds in ") + key, e);
    };
    energy_ok("energy_before");
    energy_ok("energy_after");
    energy_ok("energy");
    if (e.kind == EventKind::income) {
      const Cents amount = e.payload["amount_cents"].get<Cents>();
      if (amount < 0) fail("negative income", e);
      ledger[e.agent].income += amount;
      if (e.payload["money_after"].get<Cents>() !=
          e.payload["money_before"].get<Cents>() + amount) {
        fail("income does not reconcile", e);
      }
    } else if (e.kind == EventKind::purchase) {
      const Cents price = e.payload["final_cents"].get<Cents>();
      if (price < 0) fail("negative price", e);
      ledger[e.agent].spent += price;
      const Cents before = e.payload["money_before"].get<Cents>();
      const Cents after = e.payload["money_after"].get<Cents>();
      if (after != before - price) fail("purchase does not reconcile", e);
      if (after < 0) fail("overdraft", e);
    }
  }
  return ledger;
}

inline std::map<std::string, Cents> fold_revenue(const std::vector<Event>& events) {
  std::map<std::string, Cents> revenue;
  for (const Event& e : events) {
    if (e.kind != EventKind::purchase) continue;
    revenue[e.payload["location"].get<std::string>()] +=
        e.payload["final_cents"].get<Cents>();
  }
  return revenue;
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

inline std::filesystem::path fresh_dir(const std::string& tag) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / ("townsim_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace support
