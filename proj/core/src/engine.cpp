#include "townsim/engine.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>

#include "townsim/llm_client.hpp"
#include "townsim/rng.hpp"

namespace townsim {

using json = nlohmann::json;

namespace {

std::string join_event_lines(const std::vector<Event>& events) {
  std::string out;
  for (const Event& e : events) out += event_to_line(e) + "\n";
  return out;
}

// Deterministic Fisher-Yates driven by the stateless hash chain.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::uint64_t state = key;
  for (std::size_t i = n; i > 1; --i) {
    state = splitmix64(state);
    std::swap(idx[i - 1], idx[state % i]);
  }
  return idx;
}

}  // namespace

EngineInvariantError::EngineInvariantError(const std::string& message, std::vector<Event> recent)
    : std::runtime_error(message + "\nrecent events:\n" + join_event_lines(recent)),
      recent_(std::move(recent)) {}

EngineAbort::EngineAbort(const std::string& reason, std::vector<Event> partial)
    : std::runtime_error(reason), partial_(std::move(partial)) {}

namespace {

struct AgentState {
  Persona persona;
  std::string position;
  NeedsState needs;
  MemoryStream memory;
  bool emergency = false;   // replan event already emitted for this episode
  bool collapsed = false;   // unconscious at home until the nightly reset
  ActionType last_action = ActionType::rest;
  std::set<std::string> meals_handled;  // today's slots eaten or skipped
  // Lifetime tallies (AgentFinal).
  int meals_eaten = 0;
  int meals_skipped = 0;
  int conversations = 0;
  int purchases = 0;
  Cents total_income = 0;
  Cents total_spent = 0;
  // Day tallies (nightly reflection).
  int meals_today = 0;
  int purchases_today = 0;
  int conversations_today = 0;
  Cents spent_today = 0;
  std::mutex guard;
};

struct LocationSlot {
  std::mutex guard;
  std::set<std::string> occupants;
};

class Engine {
 public:
  Engine(Scenario scenario, DecisionBackend& backend, const RunOptions& options)
      : scenario_(std::move(scenario)), backend_(backend), options_(options) {
    if (options.no_discounts) scenario_ = scenario_without_discounts(std::move(scenario_));
    if (options.seed) scenario_.sim.seed = *options.seed;
    if (options.days) scenario_.sim.days = *options.days;
    if (options.mode) scenario_.sim.mode = *options.mode;
    k_ = scenario_.sim.constants;
    tpd_ = scenario_.sim.ticks_per_day;
    seed_ = scenario_.sim.seed;

    for (const Persona& p : scenario_.agents) {
      auto st = std::make_unique<AgentState>();
      st->persona = p;
      st->position = p.residence;
      st->needs = NeedsState{clamp_level(p.start_energy), clamp_level(p.start_grocery),
                             p.start_money};
      st->memory = MemoryStream(p.name);
      for (const SeedMemory& seed : p.seed_memories) {
        MemoryEntry e;
        e.at = SimTime{seed.day, seed.tick};
        e.kind = memory_kind_from_string(seed.kind);
        e.content = seed.content;
        if (!seed.location.empty()) e.structured["location"] = seed.location;
        st->memory.ingest(std::move(e), SimTime{1, 0}, tpd_);
      }
      agent_names_.push_back(p.name);
      agents_.emplace(p.name, std::move(st));
    }
    std::sort(agent_names_.begin(), agent_names_.end());

    for (const auto& [name, loc] : scenario_.map.locations) {
      slots_.emplace(name, std::make_unique<LocationSlot>());
    }
    for (const auto& [name, st] : agents_) {
      slots_.at(st->position)->occupants.insert(name);
    }

    for (Commitment c : options.initial_commitments) {
      for (const std::string& party : c.parties) {
        if (!agents_.count(party)) {
          throw std::invalid_argument("initial commitment names unknown agent: " + party);
        }
      }
      scenario_.map.location(c.location);  // throws UnknownLocation
      c.created = SimTime{1, 0};
      c.status = CommitmentStatus::pending;
      register_commitment(std::move(c), SimTime{1, 0});
    }
  }

  RunResult run() {
    try {
      if (scenario_.sim.mode == RunMode::parallel) {
        run_parallel();
      } else {
        run_deterministic();
      }
    } catch (const BackendUnavailable& e) {
      throw EngineAbort(std::string("decision backend unavailable: ") + e.what(),
                        log_.snapshot());
    }
    return build_result();
  }

 private:
  // -------------------------------------------------------------------------
  // Run loops
  // -------------------------------------------------------------------------

  void run_deterministic() {
    for (int day = 1; day <= scenario_.sim.days; ++day) {
      for (int tick = 0; tick < tpd_; ++tick) {
        const SimTime now{day, tick};
        // Shuffled service order demonstrates that per-agent outcomes do not
        // depend on who goes first within a tick.
        const std::uint64_t key =
            hash_mix(seed_, hash_mix(fnv1a64("tick-order"),
                                     static_cast<std::uint64_t>(to_ticks(now, tpd_))));
        for (std::size_t i : shuffled_indices(agent_names_.size(), key)) {
          agent_tick(*agents_.at(agent_names_[i]), now);
        }
        phase_b(now);
      }
      end_of_day(day);
    }
  }

  void run_parallel() {
    const int total_steps = scenario_.sim.days * tpd_;
    const std::ptrdiff_t parties = static_cast<std::ptrdiff_t>(agent_names_.size()) + 1;
    std::barrier<> phase_a_start(parties);
    std::barrier<> phase_a_done(parties);
    std::atomic<bool> stop{false};

    auto record_failure = [&](const std::string& what) {
      std::lock_guard<std::mutex> lock(failure_mutex_);
      if (!failure_) failure_ = what;
      stop.store(true);
    };

    std::vector<std::jthread> workers;
    workers.reserve(agent_names_.size());
    for (const std::string& name : agent_names_) {
      workers.emplace_back([&, name] {
        AgentState& st = *agents_.at(name);
        for (int step = 0; step < total_steps; ++step) {
          phase_a_start.arrive_and_wait();
          if (!stop.load(std::memory_order_relaxed)) {
            const SimTime now{step / tpd_ + 1, step % tpd_};
            try {
              agent_tick(st, now);
            } catch (const std::exception& e) {
              record_failure(e.what());
            }
          }
          phase_a_done.arrive_and_wait();
        }
      });
    }

    for (int step = 0; step < total_steps; ++step) {
      phase_a_start.arrive_and_wait();
      phase_a_done.arrive_and_wait();
      if (stop.load(std::memory_order_relaxed)) continue;
      const SimTime now{step / tpd_ + 1, step % tpd_};
      try {
        phase_b(now);
        if (now.tick == tpd_ - 1) end_of_day(now.day);
      } catch (const std::exception& e) {
        record_failure(e.what());
      }
    }
    workers.clear();  // join
    if (failure_) throw BackendUnavailable(*failure_);
  }

  // -------------------------------------------------------------------------
  // Phase A: one agent, one tick
  // -------------------------------------------------------------------------

  bool asleep_at(int tick) const { return tick < k_.wake_tick || tick >= k_.sleep_tick; }

  void agent_tick(AgentState& a, SimTime now) {
    if (asleep_at(now.tick) || a.collapsed) {
      a.last_action = ActionType::rest;
      return;
    }
    if (now.tick == k_.wake_tick && a.persona.income_kind == IncomeKind::monthly &&
        now.day == k_.monthly_payday_day) {
      pay(a, a.persona.income_amount, "monthly", now, "");
    }

    const bool emergency_now = a.needs.energy <= k_.emergency_threshold;
    DecisionContext ctx = build_context(a, now, emergency_now);
    DecisionOutcome outcome = decide_with_retry(backend_, ctx, k_.max_retries, seed_);
    for (const AttemptRecord& attempt : outcome.attempts) {
      if (!attempt.failure) continue;
      log_.append(now.day, now.tick, a.persona.name, EventKind::validation_failure,
                  {{"attempt", attempt.attempt},
                   {"kind", to_string(attempt.failure->kind)},
                   {"field", attempt.failure->field},
                   {"detail", attempt.failure->detail},
                   {"context", to_string(ctx.prompt_kind)}});
    }
    if (outcome.used_fallback) {
      log_.append(now.day, now.tick, a.persona.name, EventKind::backend_fallback,
                  {{"attempts", static_cast<int>(outcome.attempts.size())}});
    }

    execute_plan(a, outcome.plan, now, ctx);
    tick_decay(a.needs,
               a.last_action == ActionType::work ? Activity::work : Activity::idle, 0, k_);
    post_decay(a, now);
  }

  void execute_plan(AgentState& a, const ActionPlan& plan, SimTime now,
                    const DecisionContext& ctx) {
    switch (plan.action) {
      case ActionType::travel:
        if (plan.target != a.position) move_agent(a, plan.target, now, true);
        a.last_action = ActionType::travel;
        return;

      case ActionType::eat:
        execute_eat(a, plan, now, ctx);
        a.last_action = ActionType::eat;
        return;

      case ActionType::work: {
        const std::string& workplace = *a.persona.workplace;
        if (a.position != workplace) move_agent(a, workplace, now, true);
        log_.append(now.day, now.tick, a.persona.name, EventKind::work,
                    {{"location", workplace}});
        if (a.persona.income_kind == IncomeKind::hourly) {
          pay(a, a.persona.income_amount, "hourly", now, workplace);
        }
        a.last_action = ActionType::work;
        return;
      }

      case ActionType::shop_groceries:
        execute_shop(a, plan, now, ctx);
        a.last_action = ActionType::shop_groceries;
        return;

      case ActionType::skip:
        if (ctx.meal_due && !a.meals_handled.count(ctx.meal_name)) {
          a.meals_handled.insert(ctx.meal_name);
          ++a.meals_skipped;
          log_.append(now.day, now.tick, a.persona.name, EventKind::meal_skipped,
                      {{"slot", ctx.meal_name}, {"reason", "no affordable option"}});
        } else {
          log_.append(now.day, now.tick, a.persona.name, EventKind::rest,
                      {{"location", a.position}});
        }
        a.last_action = ActionType::rest;
        return;

      case ActionType::converse:  // social checks run in the shared phase
      case ActionType::rest:
        log_.append(now.day, now.tick, a.persona.name, EventKind::rest,
                    {{"location", a.position}});
        a.last_action = ActionType::rest;
        return;
    }
  }

  // Marks the most recent unhandled meal slot at or before `tick` as eaten.
  std::string mark_meal_eaten(AgentState& a, int tick) {
    const MealSlot* latest = nullptr;
    for (const MealSlot& slot : k_.meal_slots) {
      if (slot.tick <= tick && !a.meals_handled.count(slot.name)) {
        if (!latest || slot.tick > latest->tick) latest = &slot;
      }
    }
    if (!latest) return "";
    a.meals_handled.insert(latest->name);
    ++a.meals_eaten;
    ++a.meals_today;
    return latest->name;
  }

  void execute_eat(AgentState& a, const ActionPlan& plan, SimTime now,
                   const DecisionContext& ctx) {
    if (a.position != plan.target) move_agent(a, plan.target, now, true);

    if (plan.target == a.persona.residence) {
      const int grocery_before = a.needs.grocery;
      const HomeMealResult result = apply_home_meal(a.needs, k_);
      if (!result.ok) {  // validated upstream; defensive double-check
        a.meals_handled.insert(ctx.meal_name);
        ++a.meals_skipped;
        log_.append(now.day, now.tick, a.persona.name, EventKind::meal_skipped,
                    {{"slot", ctx.meal_name}, {"reason", "pantry too low"}});
        return;
      }
      const std::string slot = mark_meal_eaten(a, now.tick);
      log_.append(now.day, now.tick, a.persona.name, EventKind::meal,
                  {{"slot", slot},
                   {"home", true},
                   {"location", plan.target},
                   {"grocery_before", grocery_before},
                   {"grocery_after", a.needs.grocery},
                   {"energy_after", a.needs.energy}});
      MemoryEntry m;
      m.at = now;
      m.kind = MemoryKind::event;
      m.content = "Cooked a meal at home (" + plan.target + ")";
      m.structured["location"] = plan.target;
      a.memory.ingest(std::move(m), now, tpd_);
      return;
    }

    const Shop* shop = scenario_.map.shop_at(plan.target);
    if (!shop) {
      throw EngineInvariantError("eat plan passed validation for a shopless location " +
                                     plan.target,
                                 log_.tail(50));
    }
    purchase_item(a, *shop, plan.item, now, /*meal=*/true);
  }

  void execute_shop(AgentState& a, const ActionPlan& plan, SimTime now,
                    const DecisionContext& ctx) {
    std::string target = plan.target;
    if (target.empty()) {
      if (ctx.grocery_options.empty()) return;  // validated upstream
      target = ctx.grocery_options.front().location;
    }
    if (a.position != target) move_agent(a, target, now, true);
    const Shop* shop = scenario_.map.shop_at(target);
    if (!shop) {
      throw EngineInvariantError("grocery plan passed validation for a shopless location " +
                                     target,
                                 log_.tail(50));
    }
    std::string item = plan.item;
    if (item.empty()) {
      const MenuItem* best = nullptr;
      Cents best_price = 0;
      for (const MenuItem& mi : shop->menu) {
        if (mi.grocery_restore <= 0) continue;
        const Cents p = effective_price(*shop, mi, now.day);
        if (!best || p < best_price || (p == best_price && mi.name < best->name)) {
          best = &mi;
          best_price = p;
        }
      }
      if (best) item = best->name;
    }
    purchase_item(a, *shop, item, now, /*meal=*/false);
  }

  // Buys `item_name` (or the cheapest item when empty) at the shop the agent
  // is standing in; emits the purchase event and ingests the purchase memory.
  void purchase_item(AgentState& a, const Shop& shop, const std::string& item_name,
                     SimTime now, bool meal) {
    const MenuItem* item = nullptr;
    if (!item_name.empty()) {
      item = shop.find_item(item_name);
    } else {
      Cents best_price = 0;
      for (const MenuItem& mi : shop.menu) {
        const Cents p = effective_price(shop, mi, now.day);
        if (!item || p < best_price || (p == best_price && mi.name < item->name)) {
          item = &mi;
          best_price = p;
        }
      }
    }
    if (!item) {
      throw EngineInvariantError("purchase plan passed validation for a missing item '" +
                                     item_name + "' at " + shop.location,
                                 log_.tail(50));
    }
    const Cents price = effective_price(shop, *item, now.day);
    const bool discounted = effective_rate(shop, item->name, now.day) > 0.0;
    const NeedsState before = a.needs;
    apply_purchase(a.needs, *item, price);
    ++a.purchases;
    ++a.purchases_today;
    a.total_spent += price;
    a.spent_today += price;
    {
      std::lock_guard<std::mutex> lock(revenue_mutex_);
      revenue_total_[shop.location] += price;
      revenue_today_[shop.location] += price;
    }
    log_.append(now.day, now.tick, a.persona.name, EventKind::purchase,
                {{"location", shop.location},
                 {"location_kind", to_string(shop.kind)},
                 {"item", item->name},
                 {"base_cents", item->base_price},
                 {"final_cents", price},
                 {"discounted", discounted},
                 {"energy_before", before.energy},
                 {"energy_after", a.needs.energy},
                 {"grocery_before", before.grocery},
                 {"grocery_after", a.needs.grocery},
                 {"money_before", before.money},
                 {"money_after", a.needs.money}});
    MemoryEntry m;
    m.at = now;
    m.kind = MemoryKind::purchase;
    m.content = "Bought " + item->name + " at " + shop.location + " for $" + format_money(price) +
                (discounted ? " (discounted)" : "");
    m.structured["location"] = shop.location;
    m.structured["item"] = item->name;
    m.structured["price_cents"] = std::to_string(price);
    a.memory.ingest(std::move(m), now, tpd_);

    if (meal) {
      const std::string slot = mark_meal_eaten(a, now.tick);
      log_.append(now.day, now.tick, a.persona.name, EventKind::meal,
                  {{"slot", slot},
                   {"home", false},
                   {"location", shop.location},
                   {"item", item->name},
                   {"energy_after", a.needs.energy}});
    }
  }

  void post_decay(AgentState& a, SimTime now) {
    if (a.needs.energy == 0) {
      const std::string from = a.position;
      if (a.position != a.persona.residence) {
        move_agent(a, a.persona.residence, now, false);
      }
      a.collapsed = true;
      a.emergency = false;
      log_.append(now.day, now.tick, a.persona.name, EventKind::collapse_teleport,
                  {{"from", from}, {"to", a.persona.residence}, {"energy", 0}});
      return;
    }
    if (a.needs.energy <= k_.emergency_threshold) {
      if (!a.emergency) {
        a.emergency = true;
        log_.append(now.day, now.tick, a.persona.name, EventKind::emergency_replan,
                    {{"energy", a.needs.energy}});
      }
    } else {
      a.emergency = false;
    }
  }

  // Moves the agent, holding its own guard first and then both location
  // guards in lexicographic name order (the global lock hierarchy).
  void move_agent(AgentState& a, const std::string& to, SimTime now, bool travel_leg) {
    const std::string from = a.position;
    if (from == to) return;
    const int distance = travel_distance(scenario_.map, from, to);
    const int energy_before = a.needs.energy;
    {
      std::lock_guard<std::mutex> self(a.guard);
      LocationSlot& first = *slots_.at(std::min(from, to));
      LocationSlot& second = *slots_.at(std::max(from, to));
      std::lock_guard<std::mutex> l1(first.guard);
      std::lock_guard<std::mutex> l2(second.guard);
      slots_.at(from)->occupants.erase(a.persona.name);
      slots_.at(to)->occupants.insert(a.persona.name);
      a.position = to;
      if (travel_leg) apply_travel_cost(a.needs, distance, k_);
    }
    if (travel_leg) {
      log_.append(now.day, now.tick, a.persona.name, EventKind::travel,
                  {{"from", from},
                   {"to", to},
                   {"distance", distance},
                   {"energy_before", energy_before},
                   {"energy_after", a.needs.energy}});
    }
  }

  void pay(AgentState& a, Cents amount, const std::string& income_kind, SimTime now,
           const std::string& source) {
    const Cents before = a.needs.money;
    a.needs.money += amount;
    a.total_income += amount;
    json payload = {{"income_kind", income_kind},
                    {"amount_cents", amount},
                    {"money_before", before},
                    {"money_after", a.needs.money}};
    if (!source.empty()) payload["source"] = source;
    log_.append(now.day, now.tick, a.persona.name, EventKind::income, std::move(payload));
  }

  // -------------------------------------------------------------------------
  // Context assembly
  // -------------------------------------------------------------------------

  DecisionContext build_context(AgentState& a, SimTime now, bool emergency_now) {
    const Persona& p = a.persona;
    DecisionContext ctx;
    ctx.agent = AgentSnapshot{p.name,      p.age,        p.occupation, a.position,
                              p.residence, p.workplace,  p.work_start, p.work_end,
                              p.deal_proneness, a.needs};
    ctx.now = now;
    ctx.ticks_per_day = tpd_;
    ctx.emergency = emergency_now;
    ctx.constants = k_;

    for (const auto& [name, loc] : scenario_.map.locations) ctx.known_locations.push_back(name);
    for (const std::string& name : agent_names_) {
      if (name != p.name) ctx.known_agents.push_back(name);
    }

    const MealSlot* due = nullptr;
    for (const MealSlot& slot : k_.meal_slots) {
      if (slot.tick == now.tick && !a.meals_handled.count(slot.name)) due = &slot;
    }
    if (due) {
      ctx.meal_due = true;
      ctx.meal_name = due->name;
      ctx.meal_min_energy = due->min_energy;
    }

    for (const auto& [loc, shop] : scenario_.map.shops) {
      if (!shop.open_at(now.tick)) {
        ctx.closed_shops.insert(loc);
        continue;
      }
      ShopOption o;
      o.location = loc;
      o.kind = shop.kind;
      o.distance = travel_distance(scenario_.map, a.position, loc);
      for (const MenuItem& mi : shop.menu) {
        ItemOption io;
        io.name = mi.name;
        io.base_price = mi.base_price;
        io.price = effective_price(shop, mi, now.day);
        io.discounted = effective_rate(shop, mi.name, now.day) > 0.0;
        io.energy_restore = mi.energy_restore;
        io.grocery_restore = mi.grocery_restore;
        o.items.push_back(std::move(io));
      }
      auto pick = [&](auto&& qualifies) {
        int best = -1;
        for (int i = 0; i < static_cast<int>(o.items.size()); ++i) {
          if (!qualifies(o.items[i])) continue;
          if (best < 0 || o.items[i].price < o.items[best].price ||
              (o.items[i].price == o.items[best].price &&
               o.items[i].name < o.items[best].name)) {
            best = i;
          }
        }
        return best;
      };
      o.any_item = pick([](const ItemOption&) { return true; });
      if (due) {
        o.meal_item =
            pick([&](const ItemOption& io) { return io.energy_restore >= due->min_energy; });
      }
      (shop.kind == LocationKind::grocery ? ctx.grocery_options : ctx.dining_options)
          .push_back(std::move(o));
    }

    const bool work_hours = p.workplace && now.tick >= p.work_start && now.tick < p.work_end;
    ctx.home_available = a.needs.grocery >= k_.meal_grocery_cost &&
                         (emergency_now || !work_hours);
    ctx.home_distance = travel_distance(scenario_.map, a.position, p.residence);
    ctx.home_imputed_cost = k_.home_meal_imputed_cost;
    ctx.shopping_flag = a.needs.grocery < k_.grocery_threshold;

    RetrievalQuery q;
    q.now = now;
    q.max_n = scenario_.sim.memory.top_k;
    ctx.memories = a.memory.retrieve(q, scenario_.sim.memory, tpd_, p.relationships);

    for (const Commitment& c : commitments_) {
      if (c.status != CommitmentStatus::pending) continue;
      if (std::find(c.parties.begin(), c.parties.end(), p.name) == c.parties.end()) continue;
      ctx.commitments.push_back(c);
    }

    const long long window = static_cast<long long>(k_.habit_window_days) * tpd_;
    for (const auto& [loc, shop] : scenario_.map.shops) {
      if (shop.kind != LocationKind::dining) continue;
      ctx.visit_counts[loc] = a.memory.count_recent_purchases(loc, now, window, tpd_);
    }

    if (emergency_now || ctx.meal_due) {
      ctx.prompt_kind = PromptKind::dining;
    } else if (work_hours) {
      ctx.prompt_kind = PromptKind::work;
    } else {
      ctx.prompt_kind = PromptKind::daily_plan;
    }
    return ctx;
  }

  // -------------------------------------------------------------------------
  // Phase B: shared-world bookkeeping on the engine thread
  // -------------------------------------------------------------------------

  void phase_b(SimTime now) {
    sweep_commitments(now);
    if (!asleep_at(now.tick)) run_conversations(now);
    check_invariants(now);
    if (options_.capture_trace) capture_trace(now);
  }

  void sweep_commitments(SimTime now) {
    for (Commitment& c : commitments_) {
      if (c.status != CommitmentStatus::pending) continue;
      const long long delta = to_ticks(now, tpd_) - to_ticks(c.scheduled, tpd_);
      if (delta < -1) continue;
      if (delta <= 1) {
        bool all_present = true;
        for (const std::string& party : c.parties) {
          if (agents_.at(party)->position != c.location) {
            all_present = false;
            break;
          }
        }
        if (!all_present) continue;
        c.status = CommitmentStatus::fulfilled;
        log_.append(now.day, now.tick, c.parties.front(), EventKind::commitment_fulfilled,
                    {{"commitment_id", c.id},
                     {"parties", c.parties},
                     {"location", c.location},
                     {"scheduled_day", c.scheduled.day},
                     {"scheduled_tick", c.scheduled.tick}});
        for (const std::string& party : c.parties) {
          AgentState& st = *agents_.at(party);
          MemoryEntry m;
          m.at = now;
          m.kind = MemoryKind::event;
          m.content = "Met up at " + c.location + " as planned (" + c.action + ")";
          for (const std::string& other : c.parties) {
            if (other != party) m.participants.push_back(other);
          }
          m.structured["location"] = c.location;
          std::lock_guard<std::mutex> lock(st.guard);
          st.memory.ingest(std::move(m), now, tpd_);
        }
      } else {
        c.status = CommitmentStatus::broken;
        log_.append(now.day, now.tick, c.parties.front(), EventKind::commitment_broken,
                    {{"commitment_id", c.id},
                     {"parties", c.parties},
                     {"location", c.location},
                     {"scheduled_day", c.scheduled.day},
                     {"scheduled_tick", c.scheduled.tick}});
        for (const std::string& party : c.parties) {
          AgentState& st = *agents_.at(party);
          MemoryEntry m;
          m.at = now;
          m.kind = MemoryKind::reflection;
          m.content = "Missed the planned meetup at " + c.location + " (" + c.action + ")";
          for (const std::string& other : c.parties) {
            if (other != party) m.participants.push_back(other);
          }
          m.structured["location"] = c.location;
          std::lock_guard<std::mutex> lock(st.guard);
          st.memory.ingest(std::move(m), now, tpd_);
        }
      }
    }
  }

  double relationship(const Persona& from, const std::string& to) const {
    auto it = from.relationships.find(to);
    return it == from.relationships.end() ? 0.0 : it->second;
  }

  void run_conversations(SimTime now) {
    std::set<std::string> engaged;
    for (const auto& [loc_name, slot] : slots_) {
      if (slot->occupants.size() < 2) continue;
      const std::vector<std::string> occupants(slot->occupants.begin(), slot->occupants.end());
      for (const std::string& name : occupants) {
        if (engaged.count(name)) continue;
        AgentState& st = *agents_.at(name);
        if (st.collapsed) continue;
        if (auto reason = conversation_skip_reason(st.last_action, st.needs.energy, k_)) {
          log_.append(now.day, now.tick, name, EventKind::social_check_skipped,
                      {{"location", loc_name}, {"reason", *reason}});
          engaged.insert(name);  // one social check per agent per tick
          continue;
        }
        // Initiator picks the co-present agent it feels closest to.
        std::string partner;
        double best = -1.0;
        for (const std::string& other : occupants) {
          if (other == name || engaged.count(other)) continue;
          AgentState& ot = *agents_.at(other);
          if (ot.collapsed) continue;
          if (conversation_skip_reason(ot.last_action, ot.needs.energy, k_)) continue;
          const double prox = relationship(st.persona, other);
          if (prox > best || (prox == best && other < partner)) {
            best = prox;
            partner = other;
          }
        }
        if (partner.empty()) continue;  // nobody free; keep the check for later ticks
        engaged.insert(name);
        engaged.insert(partner);
        const double partner_prox = relationship(agents_.at(partner)->persona, name);
        if (!conversation_accepted(seed_, now, name, partner, partner_prox)) {
          log_.append(now.day, now.tick, partner, EventKind::social_check_skipped,
                      {{"location", loc_name}, {"reason", "declined"}, {"initiator", name}});
          continue;
        }
        run_conversation(st, *agents_.at(partner), loc_name, now);
      }
    }
  }

  void run_conversation(AgentState& initiator, AgentState& partner, const std::string& loc,
                        SimTime now) {
    ConversationSetup setup;
    setup.partner = partner.persona.name;
    setup.proximity = relationship(initiator.persona, partner.persona.name);
    setup.partner_proximity = relationship(partner.persona, initiator.persona.name);
    setup.location = loc;
    setup.proposal_time = SimTime{now.day + 1, k_.meal_slots.empty() ? k_.wake_tick + 1
                                                                     : k_.meal_slots.front().tick};
    setup.proposal_location = nearest_dining_to(loc, setup.proposal_time.tick);

    DecisionContext ctx = build_context(initiator, now, false);
    ctx.prompt_kind = PromptKind::conversation;
    ctx.conversation = setup;

    ConversationTranscript transcript = converse_with_retry(ctx, now);

    json lines = json::array();
    for (const ConversationLine& line : transcript.lines) {
      lines.push_back({{"speaker", line.speaker}, {"text", line.text}});
    }
    log_.append(now.day, now.tick, initiator.persona.name, EventKind::conversation,
                {{"location", loc},
                 {"participants", transcript.participants},
                 {"partner", partner.persona.name},
                 {"lines", std::move(lines)},
                 {"intent_count", static_cast<int>(transcript.intents.size())}});

    for (AgentState* st : {&initiator, &partner}) {
      const std::string other =
          st == &initiator ? partner.persona.name : initiator.persona.name;
      ++st->conversations;
      ++st->conversations_today;
      MemoryEntry m;
      m.at = now;
      m.kind = MemoryKind::conversation;
      m.content = "Chatted with " + other + " at " + loc;
      m.participants = {other};
      m.structured["location"] = loc;
      std::lock_guard<std::mutex> lock(st->guard);
      st->memory.ingest(std::move(m), now, tpd_);
    }

    CommitmentExtraction extraction = extract_commitments(transcript, scenario_.map, now);
    for (const RejectedIntent& rejected : extraction.rejected) {
      log_.append(now.day, now.tick, initiator.persona.name, EventKind::validation_failure,
                  {{"kind", to_string(FailureKind::unknown_location)},
                   {"field", "intent"},
                   {"detail", rejected.reason},
                   {"context", "conversation"}});
    }
    for (Commitment c : extraction.commitments) {
      c.created = now;
      register_commitment(std::move(c), now);
    }
  }

  ConversationTranscript converse_with_retry(DecisionContext ctx, SimTime now) {
    const std::string& agent = ctx.agent.name;
    for (int attempt = 1; attempt <= k_.max_retries + 1; ++attempt) {
      std::string raw;
      try {
        raw = backend_.decide(ctx);
      } catch (const BackendTransientError& e) {
        log_.append(now.day, now.tick, agent, EventKind::validation_failure,
                    {{"attempt", attempt},
                     {"kind", to_string(FailureKind::malformed_response)},
                     {"field", "transport"},
                     {"detail", e.what()},
                     {"context", "conversation"}});
        ctx.feedback.push_back(std::string("transport: ") + e.what());
        continue;
      }
      auto result = parse_conversation(raw, ctx);
      if (auto* transcript = std::get_if<ConversationTranscript>(&result)) {
        return *transcript;
      }
      const ValidationFailure& f = std::get<ValidationFailure>(result);
      log_.append(now.day, now.tick, agent, EventKind::validation_failure,
                  {{"attempt", attempt},
                   {"kind", to_string(f.kind)},
                   {"field", f.field},
                   {"detail", f.detail},
                   {"context", "conversation"}});
      ctx.feedback.push_back(to_string(f.kind) + " on field '" + f.field + "': " + f.detail);
    }
    log_.append(now.day, now.tick, agent, EventKind::backend_fallback,
                {{"attempts", k_.max_retries + 1}, {"context", "conversation"}});
    return oracle_converse(ctx, seed_);
  }

  // Nearest dining spot for a meetup proposal; prefer shops open at the
  // proposed tick, fall back to any dining shop if none would be open.
  std::string nearest_dining_to(const std::string& loc, int proposal_tick) const {
    std::string best;
    int best_dist = 0;
    bool best_open = false;
    for (const auto& [name, shop] : scenario_.map.shops) {
      if (shop.kind != LocationKind::dining) continue;
      const bool open = shop.open_at(proposal_tick);
      const int d = travel_distance(scenario_.map, loc, name);
      const bool better = best.empty() || (open && !best_open) ||
                          (open == best_open && (d < best_dist || (d == best_dist && name < best)));
      if (better) {
        best = name;
        best_dist = d;
        best_open = open;
      }
    }
    return best;
  }

  void register_commitment(Commitment c, SimTime now) {
    std::sort(c.parties.begin(), c.parties.end());
    c.parties.erase(std::unique(c.parties.begin(), c.parties.end()), c.parties.end());
    for (const Commitment& existing : commitments_) {
      if (existing.status == CommitmentStatus::pending && existing.parties == c.parties &&
          existing.location == c.location && existing.scheduled == c.scheduled) {
        return;  // identical meetup already on the books
      }
    }
    c.id = next_commitment_id_++;
    c.status = CommitmentStatus::pending;
    log_.append(now.day, now.tick, c.parties.front(), EventKind::commitment_made,
                {{"commitment_id", c.id},
                 {"parties", c.parties},
                 {"location", c.location},
                 {"scheduled_day", c.scheduled.day},
                 {"scheduled_tick", c.scheduled.tick},
                 {"action", c.action}});
    for (const std::string& party : c.parties) {
      AgentState& st = *agents_.at(party);
      MemoryEntry m;
      m.at = now;
      m.kind = MemoryKind::conversation;
      m.content = "Agreed to meet at " + c.location + " on day " +
                  std::to_string(c.scheduled.day) + " at hour " +
                  std::to_string(c.scheduled.tick) + " (" + c.action + ")";
      for (const std::string& other : c.parties) {
        if (other != party) m.participants.push_back(other);
      }
      m.structured["location"] = c.location;
      std::lock_guard<std::mutex> lock(st.guard);
      st.memory.ingest(std::move(m), now, tpd_);
    }
    commitments_.push_back(std::move(c));
  }

  void check_invariants(SimTime now) {
    std::size_t total_occupants = 0;
    for (const auto& [name, slot] : slots_) {
      total_occupants += slot->occupants.size();
      for (const std::string& occ : slot->occupants) {
        auto it = agents_.find(occ);
        if (it == agents_.end() || it->second->position != name) {
          throw EngineInvariantError(
              "occupancy desync at day " + std::to_string(now.day) + " tick " +
                  std::to_string(now.tick) + ": " + occ + " listed at " + name,
              log_.tail(50));
        }
      }
    }
    if (total_occupants != agents_.size()) {
      throw EngineInvariantError(
          "occupancy count " + std::to_string(total_occupants) + " != agent count " +
              std::to_string(agents_.size()) + " at day " + std::to_string(now.day) +
              " tick " + std::to_string(now.tick),
          log_.tail(50));
    }
    for (const auto& [name, st] : agents_) {
      const NeedsState& n = st->needs;
      if (n.money < 0 || n.energy < 0 || n.energy > 100 || n.grocery < 0 || n.grocery > 100) {
        throw EngineInvariantError(
            "needs out of bounds for " + name + " at day " + std::to_string(now.day) +
                " tick " + std::to_string(now.tick) + ": energy " + std::to_string(n.energy) +
                ", grocery " + std::to_string(n.grocery) + ", money " + std::to_string(n.money),
            log_.tail(50));
      }
    }
  }

  void capture_trace(SimTime now) {
    for (const std::string& name : agent_names_) {
      const AgentState& st = *agents_.at(name);
      trace_.push_back(TraceRow{now.day, now.tick, name, st.position, st.needs.energy,
                                st.needs.grocery, st.needs.money});
    }
  }

  // -------------------------------------------------------------------------
  // Day close
  // -------------------------------------------------------------------------

  void end_of_day(int day) {
    const SimTime now{day, tpd_ - 1};

    for (const std::string& name : agent_names_) {
      AgentState& a = *agents_.at(name);
      if (a.persona.income_kind == IncomeKind::business_owner && a.persona.workplace) {
        Cents revenue = 0;
        auto it = revenue_today_.find(*a.persona.workplace);
        if (it != revenue_today_.end()) revenue = it->second;
        pay(a, revenue, "business_owner", now, *a.persona.workplace);
      }
    }

    for (const std::string& name : agent_names_) {
      AgentState& a = *agents_.at(name);
      for (const MealSlot& slot : k_.meal_slots) {
        if (a.meals_handled.count(slot.name)) continue;
        ++a.meals_skipped;
        log_.append(now.day, now.tick, name, EventKind::meal_skipped,
                    {{"slot", slot.name}, {"reason", "missed"}});
      }
    }

    for (const std::string& name : agent_names_) {
      AgentState& a = *agents_.at(name);
      const std::string content =
          "Day " + std::to_string(day) + " wrap-up: " + std::to_string(a.meals_today) +
          " meals, " + std::to_string(a.purchases_today) + " purchases, $" +
          format_money(a.spent_today) + " spent, " + std::to_string(a.conversations_today) +
          " conversations";
      log_.append(now.day, now.tick, name, EventKind::reflection, {{"content", content}});
      MemoryEntry m;
      m.at = now;
      m.kind = MemoryKind::reflection;
      m.content = content;
      a.memory.ingest(std::move(m), now, tpd_);
    }

    for (const std::string& name : agent_names_) {
      AgentState& a = *agents_.at(name);
      log_.append(now.day, now.tick, name, EventKind::sleep,
                  {{"at", a.position}, {"home", a.persona.residence}});
      if (a.position != a.persona.residence) move_agent(a, a.persona.residence, now, false);
      a.needs.energy = 100;
      a.collapsed = false;
      a.emergency = false;
      a.meals_handled.clear();
      a.meals_today = 0;
      a.purchases_today = 0;
      a.conversations_today = 0;
      a.spent_today = 0;
      a.last_action = ActionType::rest;
    }
    revenue_today_.clear();
  }

  RunResult build_result() {
    RunResult r;
    r.scenario_name = scenario_.name;
    r.seed = seed_;
    r.mode = scenario_.sim.mode;
    r.backend_name = backend_.name();
    r.days = scenario_.sim.days;
    r.ticks_per_day = tpd_;
    r.events = log_.snapshot();
    for (const std::string& name : agent_names_) {
      const AgentState& a = *agents_.at(name);
      AgentFinal f;
      f.name = name;
      f.position = a.position;
      f.needs = a.needs;
      f.meals_eaten = a.meals_eaten;
      f.meals_skipped = a.meals_skipped;
      f.conversations = a.conversations;
      f.purchases = a.purchases;
      f.total_income = a.total_income;
      f.total_spent = a.total_spent;
      r.finals.emplace(name, std::move(f));
    }
    r.commitments = commitments_;
    r.shop_revenue = revenue_total_;
    for (const auto& [loc, shop] : scenario_.map.shops) {
      std::vector<int> days;
      for (int day = 1; day <= scenario_.sim.days; ++day) {
        for (const DiscountWindow& w : shop.discounts) {
          if (w.active_on(day)) {
            days.push_back(day);
            break;
          }
        }
      }
      if (!days.empty()) r.discount_days[loc] = std::move(days);
    }
    r.trace = trace_;
    return r;
  }

  Scenario scenario_;
  DecisionBackend& backend_;
  RunOptions options_;
  SimConstants k_;
  int tpd_ = 24;
  std::uint64_t seed_ = 0;

  std::map<std::string, std::unique_ptr<AgentState>> agents_;
  std::vector<std::string> agent_names_;  // sorted
  std::map<std::string, std::unique_ptr<LocationSlot>> slots_;

  EventLog log_;
  std::vector<Commitment> commitments_;
  std::uint64_t next_commitment_id_ = 1;

  std::mutex revenue_mutex_;
  std::map<std::string, Cents> revenue_total_;
  std::map<std::string, Cents> revenue_today_;

  std::vector<TraceRow> trace_;

  std::mutex failure_mutex_;
  std::optional<std::string> failure_;
};

}  // namespace

RunResult run_simulation(const Scenario& scenario, DecisionBackend& backend,
                         const RunOptions& options) {
  Engine engine(scenario, backend, options);
  return engine.run();
}

RunResult run_simulation(const Scenario& scenario, const RunOptions& options) {
  if (scenario.sim.backend == BackendKind::remote) {
    RemoteLlmBackend backend(RemoteLlmBackend::with_env_overrides(scenario.sim.llm),
                             options.transcript_path);
    return run_simulation(scenario, backend, options);
  }
  ScriptedOracle backend(options.seed ? *options.seed : scenario.sim.seed);
  return run_simulation(scenario, backend, options);
}

}  // namespace townsim
