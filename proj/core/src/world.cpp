#include "townsim/world.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace townsim {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

std::string to_string(LocationKind k) {
  switch (k) {
    case LocationKind::residence: return "residence";
    case LocationKind::dining: return "dining";
    case LocationKind::grocery: return "grocery";
    case LocationKind::workplace: return "workplace";
    case LocationKind::leisure: return "leisure";
  }
  return "leisure";
}

LocationKind location_kind_from_string(const std::string& s) {
  if (s == "residence") return LocationKind::residence;
  if (s == "dining") return LocationKind::dining;
  if (s == "grocery") return LocationKind::grocery;
  if (s == "workplace") return LocationKind::workplace;
  if (s == "leisure") return LocationKind::leisure;
  throw ScenarioError("", "unknown location kind: " + s);
}

std::string to_string(IncomeKind k) {
  switch (k) {
    case IncomeKind::hourly: return "hourly";
    case IncomeKind::monthly: return "monthly";
    case IncomeKind::business_owner: return "business_owner";
  }
  return "hourly";
}

IncomeKind income_kind_from_string(const std::string& s) {
  if (s == "hourly") return IncomeKind::hourly;
  if (s == "monthly") return IncomeKind::monthly;
  if (s == "business_owner") return IncomeKind::business_owner;
  throw ScenarioError("", "unknown income kind: " + s);
}

std::string to_string(BackendKind k) {
  return k == BackendKind::oracle ? "oracle" : "remote";
}

std::string to_string(RunMode m) {
  return m == RunMode::deterministic ? "deterministic" : "parallel";
}

// ---------------------------------------------------------------------------
// Map queries
// ---------------------------------------------------------------------------

const MenuItem* Shop::find_item(const std::string& name) const {
  for (const auto& item : menu) {
    if (item.name == name) return &item;
  }
  return nullptr;
}

const Location& TownMap::location(const std::string& name) const {
  auto it = locations.find(name);
  if (it == locations.end()) throw UnknownLocation(name);
  return it->second;
}

const Shop* TownMap::shop_at(const std::string& name) const {
  auto it = shops.find(name);
  return it == shops.end() ? nullptr : &it->second;
}

int travel_distance(const TownMap& map, const std::string& from, const std::string& to) {
  return manhattan(map.location(from).coord, map.location(to).coord);
}

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ScenarioError(path, msg);
}

const json& member(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(path + "." + key, "missing required key");
  return *it;
}

int get_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  return v.get<int>();
}

double get_num(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

std::string get_str(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

Cents get_money(const json& v, const std::string& path) {
  try {
    if (v.is_number()) return cents_from_dollars(v.get<double>());
    if (v.is_string()) return parse_money(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  fail(path, "expected a money amount (number or \"d.cc\" string)");
}

GridCoord get_coord(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) fail(path, "expected a [x, y] pair");
  return GridCoord{get_int(v[0], path + "[0]"), get_int(v[1], path + "[1]")};
}

MenuItem parse_menu_item(const json& v, const std::string& path) {
  MenuItem item;
  item.name = get_str(member(v, "item", path), path + ".item");
  item.base_price = get_money(member(v, "price", path), path + ".price");
  if (item.base_price < 0) fail(path + ".price", "price must be >= 0");
  if (v.contains("energy")) item.energy_restore = get_int(v["energy"], path + ".energy");
  if (v.contains("grocery")) item.grocery_restore = get_int(v["grocery"], path + ".grocery");
  if (item.energy_restore < 0) fail(path + ".energy", "must be >= 0");
  if (item.grocery_restore < 0) fail(path + ".grocery", "must be >= 0");
  return item;
}

DiscountWindow parse_discount(const json& v, const std::string& path) {
  DiscountWindow d;
  d.start_day = get_int(member(v, "start_day", path), path + ".start_day");
  d.end_day = get_int(member(v, "end_day", path), path + ".end_day");
  d.rate = get_num(member(v, "rate", path), path + ".rate");
  if (v.contains("applies_to")) d.applies_to = get_str(v["applies_to"], path + ".applies_to");
  if (d.rate < 0.0 || d.rate >= 1.0) fail(path + ".rate", "discount rate must be in [0, 1)");
  if (d.start_day > d.end_day) fail(path, "start_day must be <= end_day");
  if (d.start_day < 1) fail(path + ".start_day", "days are 1-based");
  return d;
}

MealSlot parse_meal_slot(const json& v, const std::string& path) {
  MealSlot s;
  s.name = get_str(member(v, "name", path), path + ".name");
  s.tick = get_int(member(v, "tick", path), path + ".tick");
  if (v.contains("min_energy")) s.min_energy = get_int(v["min_energy"], path + ".min_energy");
  return s;
}

SeedMemory parse_seed_memory(const json& v, const std::string& path) {
  SeedMemory m;
  if (v.contains("kind")) m.kind = get_str(v["kind"], path + ".kind");
  if (m.kind != "event" && m.kind != "reflection" && m.kind != "conversation" &&
      m.kind != "purchase") {
    fail(path + ".kind", "unknown memory kind: " + m.kind);
  }
  m.day = get_int(member(v, "day", path), path + ".day");
  if (m.day > 0) fail(path + ".day", "seed memories must predate the run (day <= 0)");
  if (v.contains("tick")) m.tick = get_int(v["tick"], path + ".tick");
  if (v.contains("content")) m.content = get_str(v["content"], path + ".content");
  if (v.contains("location")) m.location = get_str(v["location"], path + ".location");
  return m;
}

Persona parse_persona(const json& v, const std::string& path) {
  Persona p;
  p.name = get_str(member(v, "name", path), path + ".name");
  if (v.contains("age")) p.age = get_int(v["age"], path + ".age");
  if (v.contains("occupation")) p.occupation = get_str(v["occupation"], path + ".occupation");
  if (v.contains("income_kind")) {
    try {
      p.income_kind = income_kind_from_string(get_str(v["income_kind"], path + ".income_kind"));
    } catch (const ScenarioError& e) {
      fail(path + ".income_kind", e.what());
    }
  }
  if (v.contains("income")) p.income_amount = get_money(v["income"], path + ".income");
  if (p.income_amount < 0) fail(path + ".income", "must be >= 0");
  p.residence = get_str(member(v, "residence", path), path + ".residence");
  if (v.contains("workplace") && !v["workplace"].is_null()) {
    p.workplace = get_str(v["workplace"], path + ".workplace");
  }
  if (v.contains("work_hours")) {
    const json& wh = v["work_hours"];
    if (!wh.is_array() || wh.size() != 2) fail(path + ".work_hours", "expected [start, end]");
    p.work_start = get_int(wh[0], path + ".work_hours[0]");
    p.work_end = get_int(wh[1], path + ".work_hours[1]");
  }
  if (v.contains("deal_proneness")) {
    p.deal_proneness = get_num(v["deal_proneness"], path + ".deal_proneness");
  }
  if (p.deal_proneness < 0.0 || p.deal_proneness > 1.0) {
    fail(path + ".deal_proneness", "must be in [0, 1]");
  }
  if (v.contains("relationships")) {
    const json& rel = v["relationships"];
    if (!rel.is_object()) fail(path + ".relationships", "expected an object");
    for (auto it = rel.begin(); it != rel.end(); ++it) {
      double prox = get_num(it.value(), path + ".relationships." + it.key());
      if (prox < 0.0 || prox > 1.0) {
        fail(path + ".relationships." + it.key(), "proximity must be in [0, 1]");
      }
      p.relationships[it.key()] = prox;
    }
  }
  if (v.contains("preferences")) {
    const json& prefs = v["preferences"];
    if (!prefs.is_array()) fail(path + ".preferences", "expected an array");
    for (std::size_t i = 0; i < prefs.size(); ++i) {
      p.preferences.push_back(get_str(prefs[i], path + ".preferences[" + std::to_string(i) + "]"));
    }
  }
  if (v.contains("start_money")) p.start_money = get_money(v["start_money"], path + ".start_money");
  if (p.start_money < 0) fail(path + ".start_money", "must be >= 0");
  if (v.contains("start_energy")) p.start_energy = get_int(v["start_energy"], path + ".start_energy");
  if (p.start_energy < 0 || p.start_energy > 100) fail(path + ".start_energy", "must be in [0, 100]");
  if (v.contains("start_grocery")) p.start_grocery = get_int(v["start_grocery"], path + ".start_grocery");
  if (p.start_grocery < 0 || p.start_grocery > 100) fail(path + ".start_grocery", "must be in [0, 100]");
  if (v.contains("seed_memories")) {
    const json& seeds = v["seed_memories"];
    if (!seeds.is_array()) fail(path + ".seed_memories", "expected an array");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      p.seed_memories.push_back(
          parse_seed_memory(seeds[i], path + ".seed_memories[" + std::to_string(i) + "]"));
    }
  }
  return p;
}

void parse_sim(const json& v, SimConfig& sim) {
  const std::string path = "sim";
  if (v.contains("days")) sim.days = get_int(v["days"], path + ".days");
  if (v.contains("ticks_per_day")) sim.ticks_per_day = get_int(v["ticks_per_day"], path + ".ticks_per_day");
  if (v.contains("seed")) {
    const json& s = v["seed"];
    if (s.is_number_unsigned()) sim.seed = s.get<std::uint64_t>();
    else if (s.is_number_integer() && s.get<long long>() >= 0) sim.seed = static_cast<std::uint64_t>(s.get<long long>());
    else fail(path + ".seed", "expected a non-negative integer");
  }
  if (v.contains("backend")) {
    std::string b = get_str(v["backend"], path + ".backend");
    if (b == "oracle") sim.backend = BackendKind::oracle;
    else if (b == "remote") sim.backend = BackendKind::remote;
    else fail(path + ".backend", "expected oracle|remote");
  }
  if (v.contains("mode")) {
    std::string m = get_str(v["mode"], path + ".mode");
    if (m == "deterministic") sim.mode = RunMode::deterministic;
    else if (m == "parallel") sim.mode = RunMode::parallel;
    else fail(path + ".mode", "expected deterministic|parallel");
  }
  if (v.contains("constants")) {
    const json& c = v["constants"];
    const std::string cp = path + ".constants";
    SimConstants& k = sim.constants;
    auto opt_int = [&](const char* key, int& out) {
      if (c.contains(key)) out = get_int(c[key], cp + "." + key);
    };
    auto opt_num = [&](const char* key, double& out) {
      if (c.contains(key)) out = get_num(c[key], cp + "." + key);
    };
    opt_int("base_decay", k.base_decay);
    opt_int("work_decay", k.work_decay);
    opt_int("travel_cost", k.travel_cost);
    opt_int("home_meal_energy", k.home_meal_energy);
    opt_int("meal_grocery_cost", k.meal_grocery_cost);
    opt_int("grocery_threshold", k.grocery_threshold);
    opt_int("emergency_threshold", k.emergency_threshold);
    opt_int("conversation_min_energy", k.conversation_min_energy);
    opt_int("wake_tick", k.wake_tick);
    opt_int("sleep_tick", k.sleep_tick);
    opt_int("monthly_payday_day", k.monthly_payday_day);
    opt_int("max_retries", k.max_retries);
    opt_int("habit_window_days", k.habit_window_days);
    opt_num("discount_bonus", k.discount_bonus);
    opt_num("distance_cost", k.distance_cost);
    opt_num("habit_bonus", k.habit_bonus);
    opt_num("substitution_tolerance", k.substitution_tolerance);
    if (c.contains("home_meal_imputed_cost")) {
      k.home_meal_imputed_cost = get_money(c["home_meal_imputed_cost"], cp + ".home_meal_imputed_cost");
    }
    if (c.contains("meal_slots")) {
      const json& slots = c["meal_slots"];
      if (!slots.is_array()) fail(cp + ".meal_slots", "expected an array");
      k.meal_slots.clear();
      for (std::size_t i = 0; i < slots.size(); ++i) {
        k.meal_slots.push_back(
            parse_meal_slot(slots[i], cp + ".meal_slots[" + std::to_string(i) + "]"));
      }
    }
  }
  if (v.contains("memory")) {
    const json& m = v["memory"];
    const std::string mp = path + ".memory";
    if (m.contains("half_life_ticks")) sim.memory.half_life_ticks = get_int(m["half_life_ticks"], mp + ".half_life_ticks");
    if (m.contains("w_time")) sim.memory.w_time = get_num(m["w_time"], mp + ".w_time");
    if (m.contains("w_rel")) sim.memory.w_rel = get_num(m["w_rel"], mp + ".w_rel");
    if (m.contains("top_k")) sim.memory.top_k = get_int(m["top_k"], mp + ".top_k");
    if (m.contains("hard_horizon_ticks")) sim.memory.hard_horizon_ticks = get_int(m["hard_horizon_ticks"], mp + ".hard_horizon_ticks");
    if (sim.memory.half_life_ticks <= 0) fail(mp + ".half_life_ticks", "must be > 0");
    if (sim.memory.top_k <= 0) fail(mp + ".top_k", "must be > 0");
  }
  if (v.contains("llm")) {
    const json& l = v["llm"];
    const std::string lp = path + ".llm";
    if (l.contains("endpoint")) sim.llm.endpoint = get_str(l["endpoint"], lp + ".endpoint");
    if (l.contains("api_key")) sim.llm.api_key = get_str(l["api_key"], lp + ".api_key");
    if (l.contains("model")) sim.llm.model = get_str(l["model"], lp + ".model");
    if (l.contains("temperature")) sim.llm.temperature = get_num(l["temperature"], lp + ".temperature");
    if (l.contains("timeout_seconds")) sim.llm.timeout_seconds = get_int(l["timeout_seconds"], lp + ".timeout_seconds");
    if (l.contains("max_inflight")) sim.llm.max_inflight = get_int(l["max_inflight"], lp + ".max_inflight");
    if (l.contains("max_consecutive_failures")) sim.llm.max_consecutive_failures = get_int(l["max_consecutive_failures"], lp + ".max_consecutive_failures");
    if (sim.llm.max_inflight <= 0) fail(lp + ".max_inflight", "must be > 0");
  }
}

void validate_scenario(const Scenario& s) {
  const SimConfig& sim = s.sim;
  if (sim.days < 0) fail("sim.days", "must be >= 0");
  if (sim.ticks_per_day < 1 || sim.ticks_per_day > 1000) fail("sim.ticks_per_day", "must be in [1, 1000]");
  if (sim.constants.wake_tick < 0 || sim.constants.sleep_tick > sim.ticks_per_day ||
      sim.constants.wake_tick >= sim.constants.sleep_tick) {
    fail("sim.constants", "need 0 <= wake_tick < sleep_tick <= ticks_per_day");
  }
  if (sim.constants.base_decay < 0 || sim.constants.work_decay < 0 || sim.constants.travel_cost < 0) {
    fail("sim.constants", "decay and travel costs must be >= 0");
  }
  if (sim.constants.meal_grocery_cost <= 0) fail("sim.constants.meal_grocery_cost", "must be > 0");
  if (sim.constants.max_retries < 0) fail("sim.constants.max_retries", "must be >= 0");
  for (std::size_t i = 0; i < sim.constants.meal_slots.size(); ++i) {
    const MealSlot& slot = sim.constants.meal_slots[i];
    const std::string path = "sim.constants.meal_slots[" + std::to_string(i) + "]";
    if (slot.tick < sim.constants.wake_tick || slot.tick >= sim.constants.sleep_tick) {
      fail(path + ".tick", "meal slots must fall inside the awake window");
    }
    if (i > 0 && slot.tick <= sim.constants.meal_slots[i - 1].tick) {
      fail(path + ".tick", "meal slots must be strictly increasing");
    }
  }

  bool any_residence = false, any_food = false;
  for (const auto& [name, loc] : s.map.locations) {
    if (loc.capacity && *loc.capacity < 1) fail("map.locations." + name + ".capacity", "must be >= 1");
    if (loc.kind == LocationKind::residence) any_residence = true;
    if (loc.kind == LocationKind::dining || loc.kind == LocationKind::grocery) any_food = true;
  }
  if (any_residence && any_food && s.map.travel_paths.empty()) {
    fail("map.travel_paths", "at least one waypoint is required to connect residences to shops");
  }

  for (const auto& [name, shop] : s.map.shops) {
    const std::string path = "shops." + name;
    if (!s.map.has(name)) fail(path, "shop placed at unknown location");
    if (shop.kind != LocationKind::dining && shop.kind != LocationKind::grocery) {
      fail(path + ".kind", "shop kind must be dining or grocery");
    }
    if (s.map.location(name).kind != shop.kind) {
      fail(path, "location kind conflicts with shop kind");
    }
    if (shop.menu.empty()) fail(path + ".menu", "menu must not be empty");
    std::set<std::string> item_names;
    for (const auto& item : shop.menu) {
      if (!item_names.insert(item.name).second) {
        fail(path + ".menu", "duplicate menu item: " + item.name);
      }
    }
    for (std::size_t i = 0; i < shop.discounts.size(); ++i) {
      const DiscountWindow& d = shop.discounts[i];
      if (d.applies_to != "all" && !shop.find_item(d.applies_to)) {
        fail(path + ".discounts[" + std::to_string(i) + "].applies_to",
             "no such menu item: " + d.applies_to);
      }
    }
    if (shop.open_tick < 0 || shop.close_tick > sim.ticks_per_day || shop.open_tick >= shop.close_tick) {
      fail(path + ".open", "need 0 <= open < close <= ticks_per_day");
    }
  }

  std::set<std::string> agent_names;
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    const Persona& p = s.agents[i];
    const std::string path = "agents[" + std::to_string(i) + "] (" + p.name + ")";
    if (p.name.empty()) fail(path + ".name", "must not be empty");
    if (!agent_names.insert(p.name).second) fail(path + ".name", "duplicate agent name");
    if (!s.map.has(p.residence)) fail(path + ".residence", "unknown location: " + p.residence);
    if (s.map.location(p.residence).kind != LocationKind::residence) {
      fail(path + ".residence", p.residence + " is not a residence");
    }
    if (p.workplace && !s.map.has(*p.workplace)) {
      fail(path + ".workplace", "unknown location: " + *p.workplace);
    }
    if (p.work_start < 0 || p.work_end > sim.ticks_per_day || p.work_start >= p.work_end) {
      fail(path + ".work_hours", "need 0 <= start < end <= ticks_per_day");
    }
    for (const SeedMemory& m : p.seed_memories) {
      if (!m.location.empty() && !s.map.has(m.location)) {
        fail(path + ".seed_memories", "unknown location: " + m.location);
      }
    }
  }
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    const Persona& p = s.agents[i];
    for (const auto& [other, prox] : p.relationships) {
      (void)prox;
      if (!agent_names.count(other)) {
        fail("agents[" + std::to_string(i) + "].relationships", "unknown agent: " + other);
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// parse / serialize
// ---------------------------------------------------------------------------

Scenario parse_scenario(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ScenarioError("", std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail("", "scenario root must be an object");

  Scenario s;
  if (doc.contains("name")) s.name = get_str(doc["name"], "name");

  // Pass 1: locations (short [x,y] form or long object form).
  const json& map_obj = member(doc, "map", "");
  const json& locs = member(map_obj, "locations", "map");
  if (!locs.is_object()) fail("map.locations", "expected an object");
  std::map<std::string, bool> kind_explicit;
  for (auto it = locs.begin(); it != locs.end(); ++it) {
    const std::string path = "map.locations." + it.key();
    Location loc;
    loc.name = it.key();
    const json& v = it.value();
    if (v.is_array()) {
      loc.coord = get_coord(v, path);
    } else if (v.is_object()) {
      loc.coord = get_coord(member(v, "coord", path), path + ".coord");
      if (v.contains("kind")) {
        try {
          loc.kind = location_kind_from_string(get_str(v["kind"], path + ".kind"));
        } catch (const ScenarioError& e) {
          fail(path + ".kind", e.what());
        }
        kind_explicit[loc.name] = true;
      }
      if (v.contains("capacity")) loc.capacity = get_int(v["capacity"], path + ".capacity");
    } else {
      fail(path, "expected [x, y] or an object with coord/kind/capacity");
    }
    s.map.locations[loc.name] = loc;
  }
  if (map_obj.contains("travel_paths")) {
    const json& paths = map_obj["travel_paths"];
    if (!paths.is_array()) fail("map.travel_paths", "expected an array of [x, y] pairs");
    for (std::size_t i = 0; i < paths.size(); ++i) {
      s.map.travel_paths.push_back(get_coord(paths[i], "map.travel_paths[" + std::to_string(i) + "]"));
    }
  }

  // Pass 2: shops; a shop fixes its location's kind unless explicitly set.
  if (doc.contains("shops")) {
    const json& shops = doc["shops"];
    if (!shops.is_object()) fail("shops", "expected an object keyed by location name");
    for (auto it = shops.begin(); it != shops.end(); ++it) {
      const std::string path = "shops." + it.key();
      const json& v = it.value();
      Shop shop;
      shop.location = it.key();
      if (v.contains("kind")) {
        try {
          shop.kind = location_kind_from_string(get_str(v["kind"], path + ".kind"));
        } catch (const ScenarioError& e) {
          fail(path + ".kind", e.what());
        }
      }
      const json& menu = member(v, "menu", path);
      if (!menu.is_array()) fail(path + ".menu", "expected an array");
      for (std::size_t i = 0; i < menu.size(); ++i) {
        shop.menu.push_back(parse_menu_item(menu[i], path + ".menu[" + std::to_string(i) + "]"));
      }
      if (v.contains("discounts")) {
        const json& ds = v["discounts"];
        if (!ds.is_array()) fail(path + ".discounts", "expected an array");
        for (std::size_t i = 0; i < ds.size(); ++i) {
          shop.discounts.push_back(parse_discount(ds[i], path + ".discounts[" + std::to_string(i) + "]"));
        }
      }
      if (v.contains("open")) {
        const json& open = v["open"];
        if (!open.is_array() || open.size() != 2) fail(path + ".open", "expected [open, close]");
        shop.open_tick = get_int(open[0], path + ".open[0]");
        shop.close_tick = get_int(open[1], path + ".open[1]");
      }
      auto loc_it = s.map.locations.find(shop.location);
      if (loc_it == s.map.locations.end()) fail(path, "shop placed at unknown location");
      if (!kind_explicit[shop.location]) loc_it->second.kind = shop.kind;
      s.map.shops[shop.location] = shop;
    }
  }

  // Pass 3: agents; residences/workplaces claim kinds for short-form entries.
  if (doc.contains("agents")) {
    const json& agents = doc["agents"];
    if (!agents.is_array()) fail("agents", "expected an array");
    for (std::size_t i = 0; i < agents.size(); ++i) {
      s.agents.push_back(parse_persona(agents[i], "agents[" + std::to_string(i) + "]"));
    }
  }
  for (const Persona& p : s.agents) {
    auto it = s.map.locations.find(p.residence);
    if (it != s.map.locations.end() && !kind_explicit[p.residence] &&
        !s.map.shops.count(p.residence)) {
      it->second.kind = LocationKind::residence;
    }
  }
  for (const Persona& p : s.agents) {
    if (!p.workplace) continue;
    auto it = s.map.locations.find(*p.workplace);
    if (it != s.map.locations.end() && !kind_explicit[*p.workplace] &&
        !s.map.shops.count(*p.workplace) && it->second.kind == LocationKind::leisure) {
      bool is_residence = false;
      for (const Persona& q : s.agents) {
        if (q.residence == *p.workplace) is_residence = true;
      }
      if (!is_residence) it->second.kind = LocationKind::workplace;
    }
  }

  if (doc.contains("sim")) parse_sim(doc["sim"], s.sim);

  validate_scenario(s);
  return s;
}

Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ScenarioError("", "cannot open scenario file: " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string serialize_scenario(const Scenario& s) {
  json doc;
  if (!s.name.empty()) doc["name"] = s.name;

  json locs = json::object();
  for (const auto& [name, loc] : s.map.locations) {
    json v;
    v["coord"] = {loc.coord.x, loc.coord.y};
    v["kind"] = to_string(loc.kind);
    if (loc.capacity) v["capacity"] = *loc.capacity;
    locs[name] = v;
  }
  doc["map"]["locations"] = locs;
  json paths = json::array();
  for (const GridCoord& c : s.map.travel_paths) paths.push_back({c.x, c.y});
  doc["map"]["travel_paths"] = paths;

  json shops = json::object();
  for (const auto& [name, shop] : s.map.shops) {
    json v;
    v["kind"] = to_string(shop.kind);
    json menu = json::array();
    for (const MenuItem& item : shop.menu) {
      json m;
      m["item"] = item.name;
      m["price"] = format_money(item.base_price);
      m["energy"] = item.energy_restore;
      m["grocery"] = item.grocery_restore;
      menu.push_back(m);
    }
    v["menu"] = menu;
    json ds = json::array();
    for (const DiscountWindow& d : shop.discounts) {
      json dj;
      dj["start_day"] = d.start_day;
      dj["end_day"] = d.end_day;
      dj["rate"] = d.rate;
      dj["applies_to"] = d.applies_to;
      ds.push_back(dj);
    }
    v["discounts"] = ds;
    v["open"] = {shop.open_tick, shop.close_tick};
    shops[name] = v;
  }
  doc["shops"] = shops;

  json agents = json::array();
  for (const Persona& p : s.agents) {
    json v;
    v["name"] = p.name;
    v["age"] = p.age;
    v["occupation"] = p.occupation;
    v["income_kind"] = to_string(p.income_kind);
    v["income"] = format_money(p.income_amount);
    v["residence"] = p.residence;
    if (p.workplace) v["workplace"] = *p.workplace;
    v["work_hours"] = {p.work_start, p.work_end};
    v["deal_proneness"] = p.deal_proneness;
    json rel = json::object();
    for (const auto& [other, prox] : p.relationships) rel[other] = prox;
    v["relationships"] = rel;
    v["preferences"] = p.preferences;
    v["start_money"] = format_money(p.start_money);
    v["start_energy"] = p.start_energy;
    v["start_grocery"] = p.start_grocery;
    json seeds = json::array();
    for (const SeedMemory& m : p.seed_memories) {
      json sj;
      sj["kind"] = m.kind;
      sj["day"] = m.day;
      sj["tick"] = m.tick;
      sj["content"] = m.content;
      sj["location"] = m.location;
      seeds.push_back(sj);
    }
    v["seed_memories"] = seeds;
    agents.push_back(v);
  }
  doc["agents"] = agents;

  json sim;
  sim["days"] = s.sim.days;
  sim["ticks_per_day"] = s.sim.ticks_per_day;
  sim["seed"] = s.sim.seed;
  sim["backend"] = to_string(s.sim.backend);
  sim["mode"] = to_string(s.sim.mode);
  const SimConstants& k = s.sim.constants;
  json c;
  c["base_decay"] = k.base_decay;
  c["work_decay"] = k.work_decay;
  c["travel_cost"] = k.travel_cost;
  c["home_meal_energy"] = k.home_meal_energy;
  c["meal_grocery_cost"] = k.meal_grocery_cost;
  c["grocery_threshold"] = k.grocery_threshold;
  c["emergency_threshold"] = k.emergency_threshold;
  c["conversation_min_energy"] = k.conversation_min_energy;
  c["wake_tick"] = k.wake_tick;
  c["sleep_tick"] = k.sleep_tick;
  c["monthly_payday_day"] = k.monthly_payday_day;
  c["max_retries"] = k.max_retries;
  c["habit_window_days"] = k.habit_window_days;
  c["discount_bonus"] = k.discount_bonus;
  c["distance_cost"] = k.distance_cost;
  c["habit_bonus"] = k.habit_bonus;
  c["substitution_tolerance"] = k.substitution_tolerance;
  c["home_meal_imputed_cost"] = format_money(k.home_meal_imputed_cost);
  json slots = json::array();
  for (const MealSlot& slot : k.meal_slots) {
    json sj;
    sj["name"] = slot.name;
    sj["tick"] = slot.tick;
    sj["min_energy"] = slot.min_energy;
    slots.push_back(sj);
  }
  c["meal_slots"] = slots;
  sim["constants"] = c;
  json mem;
  mem["half_life_ticks"] = s.sim.memory.half_life_ticks;
  mem["w_time"] = s.sim.memory.w_time;
  mem["w_rel"] = s.sim.memory.w_rel;
  mem["top_k"] = s.sim.memory.top_k;
  mem["hard_horizon_ticks"] = s.sim.memory.hard_horizon_ticks;
  sim["memory"] = mem;
  json llm;
  llm["endpoint"] = s.sim.llm.endpoint;
  llm["api_key"] = s.sim.llm.api_key;
  llm["model"] = s.sim.llm.model;
  llm["temperature"] = s.sim.llm.temperature;
  llm["timeout_seconds"] = s.sim.llm.timeout_seconds;
  llm["max_inflight"] = s.sim.llm.max_inflight;
  llm["max_consecutive_failures"] = s.sim.llm.max_consecutive_failures;
  sim["llm"] = llm;
  doc["sim"] = sim;

  return doc.dump(2) + "\n";
}

Scenario scenario_without_discounts(Scenario s) {
  for (auto& [name, shop] : s.map.shops) {
    (void)name;
    shop.discounts.clear();
  }
  return s;
}

}  // namespace townsim
