#include "townsim/decision.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"
#include "townsim/rng.hpp"

namespace townsim {

using json = nlohmann::json;

std::string to_string(ActionType a) {
  switch (a) {
    case ActionType::eat: return "eat";
    case ActionType::travel: return "travel";
    case ActionType::work: return "work";
    case ActionType::shop_groceries: return "shop_groceries";
    case ActionType::rest: return "rest";
    case ActionType::converse: return "converse";
    case ActionType::skip: return "skip";
  }
  return "rest";
}

std::optional<ActionType> action_from_string(const std::string& s) {
  if (s == "eat") return ActionType::eat;
  if (s == "travel") return ActionType::travel;
  if (s == "work") return ActionType::work;
  if (s == "shop_groceries") return ActionType::shop_groceries;
  if (s == "rest") return ActionType::rest;
  if (s == "converse") return ActionType::converse;
  if (s == "skip") return ActionType::skip;
  return std::nullopt;
}

std::string to_string(PromptKind k) {
  switch (k) {
    case PromptKind::daily_plan: return "daily_plan";
    case PromptKind::dining: return "dining";
    case PromptKind::conversation: return "conversation";
    case PromptKind::work: return "work";
  }
  return "daily_plan";
}

std::string to_string(FailureKind k) {
  switch (k) {
    case FailureKind::unknown_location: return "unknown_location";
    case FailureKind::unknown_menu_item: return "unknown_menu_item";
    case FailureKind::insufficient_funds: return "insufficient_funds";
    case FailureKind::insufficient_grocery: return "insufficient_grocery";
    case FailureKind::shop_closed: return "shop_closed";
    case FailureKind::malformed_response: return "malformed_response";
  }
  return "malformed_response";
}

std::string plan_to_json(const ActionPlan& plan) {
  json j;
  j["time"] = plan.time;
  j["action"] = to_string(plan.action);
  j["target"] = plan.target;
  j["item"] = plan.item;
  j["description"] = plan.description;
  j["energy_considerations"] = plan.energy_considerations;
  j["reasoning"] = plan.reasoning;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

namespace {

void append_location_lines(std::string& out, const DecisionContext& ctx) {
  // One line per known location; shop lines carry menu and hours so the
  // whitelist alone grounds every purchasable item.
  std::map<std::string, const ShopOption*> open_shops;
  for (const ShopOption& s : ctx.dining_options) open_shops[s.location] = &s;
  for (const ShopOption& s : ctx.grocery_options) open_shops[s.location] = &s;
  for (const std::string& name : ctx.known_locations) {
    out += "- " + name;
    auto it = open_shops.find(name);
    if (it != open_shops.end()) {
      const ShopOption& s = *it->second;
      out += s.kind == LocationKind::grocery ? " (grocery, open now;" : " (restaurant, open now;";
      out += " " + std::to_string(s.distance) + " blocks away) menu:";
      for (const ItemOption& item : s.items) {
        out += " " + item.name + " $" + format_money(item.price);
        if (item.discounted) {
          out += " (discounted from $" + format_money(item.base_price) + ")";
        }
        out += ";";
      }
    }
    out += "\n";
  }
}

void append_memories(std::string& out, const DecisionContext& ctx) {
  out += "== RECENT MEMORIES ==\n";
  if (ctx.memories.empty()) {
    out += "(nothing noteworthy)\n";
    return;
  }
  for (const MemoryEntry& m : ctx.memories) {
    out += "- [day " + std::to_string(m.at.day) + ", hour " + std::to_string(m.at.tick) +
           "] " + m.content + "\n";
  }
}

void append_commitments(std::string& out, const DecisionContext& ctx) {
  out += "== PENDING COMMITMENTS ==\n";
  if (ctx.commitments.empty()) {
    out += "(none)\n";
    return;
  }
  for (const Commitment& c : ctx.commitments) {
    std::string parties;
    for (const std::string& p : c.parties) {
      if (!parties.empty()) parties += ", ";
      parties += p;
    }
    out += "- " + c.action + " with " + parties + " at " + c.location + " on day " +
           std::to_string(c.scheduled.day) + " hour " + std::to_string(c.scheduled.tick) + "\n";
  }
}

const char* kPlanFormat =
    "== RESPONSE FORMAT ==\n"
    "Reply with exactly one JSON object inside a single fenced code block:\n"
    "```json\n"
    "{\"time\": <hour>, \"action\": \"<eat|travel|work|shop_groceries|rest|converse|skip>\", "
    "\"target\": \"<location or agent>\", \"item\": \"<menu item if buying>\", "
    "\"description\": \"...\", \"energy_considerations\": \"...\", \"reasoning\": \"...\"}\n"
    "```\n"
    "Any other text outside the block is ignored. Unknown fields are ignored; "
    "time, action and (for most actions) target are required.\n";

}  // namespace

std::string assemble_prompt(const DecisionContext& ctx) {
  const AgentSnapshot& a = ctx.agent;
  std::string out;
  out.reserve(4096);

  out += "You are " + a.name + ", a " + std::to_string(a.age) + "-year-old " +
         (a.occupation.empty() ? "resident" : a.occupation) + " in a small town.\n\n";

  out += "== CURRENT STATE ==\n";
  out += "Day " + std::to_string(ctx.now.day) + ", hour " + std::to_string(ctx.now.tick) +
         ". You are at " + a.position + ".\n";
  out += "Energy " + std::to_string(a.needs.energy) + "/100, pantry " +
         std::to_string(a.needs.grocery) + "/100, wallet $" + format_money(a.needs.money) + ".\n";
  if (a.workplace) {
    out += "You work at " + *a.workplace + " from hour " + std::to_string(a.work_start) +
           " to " + std::to_string(a.work_end) + ".\n";
  }
  if (ctx.meal_due) {
    out += "It is " + ctx.meal_name + " time and you have not eaten yet.\n";
  }
  if (ctx.shopping_flag) {
    out += "Your pantry is running low; a grocery run is needed soon.\n";
  }
  if (ctx.home_available) {
    out += "You could cook at home (" + a.residence + ", " + std::to_string(ctx.home_distance) +
           " blocks away) using your pantry stock.\n";
  }
  out += "\n";

  if (ctx.emergency) {
    out += "== EMERGENCY ==\n";
    out += "Your energy is critically low (" + std::to_string(a.needs.energy) +
           "/100). You must get food immediately. Choose an eat action now; do not "
           "work, rest, or make social plans until you have eaten.\n\n";
  }

  out += "== TOWN RULES ==\n";
  out += "Eat three meals a day (breakfast, lunch, dinner); skipping meals drains you. "
         "Walking costs energy per block. Working drains extra energy. You cannot spend "
         "money you do not have, and you can only buy items that are actually on a menu.\n\n";

  out += "== KNOWN LOCATIONS ==\n";
  out += "Only choose from the following known locations:\n";
  append_location_lines(out, ctx);
  out += "\n";

  append_memories(out, ctx);
  out += "\n";
  append_commitments(out, ctx);
  out += "\n";

  out += "== TASK ==\n";
  switch (ctx.prompt_kind) {
    case PromptKind::daily_plan:
      out += "Decide your next action for hour " + std::to_string(ctx.now.tick) +
             ". Honor pending commitments first, keep your job, and keep yourself fed "
             "within budget.\n";
      break;
    case PromptKind::dining:
      out += "Pick where to eat " + (ctx.meal_name.empty() ? std::string("your meal") : ctx.meal_name) +
             " right now, weighing price, any discounts, walking distance, and your habits. "
             "Eating at home uses pantry stock instead of money.\n";
      break;
    case PromptKind::work:
      out += "It is working hours. Plan your work action.\n";
      break;
    case PromptKind::conversation: {
      const ConversationSetup& cv = ctx.conversation ? *ctx.conversation : ConversationSetup{};
      out += "You run into " + cv.partner + " at " + cv.location +
             ". Exchange a few words. If it fits you both, propose meeting at " +
             cv.proposal_location + " on day " + std::to_string(cv.proposal_time.day) +
             " hour " + std::to_string(cv.proposal_time.tick) + ".\n";
      out += "== RESPONSE FORMAT ==\n";
      out += "Reply with exactly one JSON object inside a single fenced code block:\n";
      out += "```json\n{\"lines\": [{\"speaker\": \"...\", \"text\": \"...\"}], "
             "\"intents\": [{\"kind\": \"commitment\", \"parties\": [\"...\"], "
             "\"location\": \"...\", \"day\": 1, \"tick\": 8, \"action\": \"...\"}]}\n```\n";
      out += "Leave intents empty unless a concrete meetup was agreed.\n";
      break;
    }
  }
  if (ctx.prompt_kind != PromptKind::conversation) {
    out += kPlanFormat;
  }

  if (!ctx.feedback.empty()) {
    out += "\n== PREVIOUS ATTEMPT REJECTED ==\n";
    for (const std::string& f : ctx.feedback) {
      out += "- " + f + "\n";
    }
    out += "Fix the problem and answer again in the same format.\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fenced-block scanner and validation
// ---------------------------------------------------------------------------

std::optional<std::string> extract_structured_block(const std::string& raw) {
  std::vector<std::string> blocks;
  std::size_t pos = 0;
  while (true) {
    std::size_t open = raw.find("```", pos);
    if (open == std::string::npos) break;
    std::size_t body = raw.find('\n', open + 3);  // skip the language tag
    if (body == std::string::npos) return std::nullopt;  // dangling fence
    ++body;
    std::size_t close = raw.find("```", body);
    if (close == std::string::npos) return std::nullopt;  // unterminated fence
    blocks.push_back(raw.substr(body, close - body));
    pos = close + 3;
  }
  if (blocks.size() == 1) return blocks[0];
  if (blocks.size() > 1) return std::nullopt;  // exactly one block is required
  // No fences: treat the whole response as the block (bare JSON).
  std::size_t b = raw.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return std::nullopt;
  std::size_t e = raw.find_last_not_of(" \t\r\n");
  return raw.substr(b, e - b + 1);
}

namespace {

ValidationFailure vfail(FailureKind kind, std::string field, std::string detail) {
  return ValidationFailure{kind, std::move(field), std::move(detail)};
}

const ShopOption* find_option(const std::vector<ShopOption>& options, const std::string& name) {
  for (const ShopOption& s : options) {
    if (s.location == name) return &s;
  }
  return nullptr;
}

bool known_location(const DecisionContext& ctx, const std::string& name) {
  return std::find(ctx.known_locations.begin(), ctx.known_locations.end(), name) !=
         ctx.known_locations.end();
}

// Cheapest affordable-or-not price the plan would pay at this shop.
const ItemOption* default_item(const ShopOption& shop) {
  if (shop.any_item >= 0) return &shop.items[shop.any_item];
  return nullptr;
}

std::optional<ValidationFailure> check_purchase(const DecisionContext& ctx,
                                                const ShopOption& shop,
                                                const std::string& item_field,
                                                const std::string& item_name) {
  const ItemOption* item = nullptr;
  if (!item_name.empty()) {
    for (const ItemOption& it : shop.items) {
      if (it.name == item_name) item = &it;
    }
    if (!item) {
      return vfail(FailureKind::unknown_menu_item, item_field,
                   "no such menu item at " + shop.location + ": " + item_name);
    }
  } else {
    item = default_item(shop);
    if (!item) {
      return vfail(FailureKind::unknown_menu_item, item_field,
                   shop.location + " has nothing purchasable");
    }
  }
  if (item->price > ctx.agent.needs.money) {
    return vfail(FailureKind::insufficient_funds, "target",
                 item->name + " costs $" + format_money(item->price) + " but wallet is $" +
                     format_money(ctx.agent.needs.money));
  }
  return std::nullopt;
}

}  // namespace

ValidationResult validate_plan(const std::string& raw, const DecisionContext& ctx) {
  std::optional<std::string> block = extract_structured_block(raw);
  if (!block) {
    return vfail(FailureKind::malformed_response, "response",
                 "expected exactly one structured block");
  }
  json j = json::parse(*block, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return vfail(FailureKind::malformed_response, "response", "not a JSON object");
  }

  ActionPlan plan;

  if (!j.contains("time")) {
    return vfail(FailureKind::malformed_response, "time", "missing required field");
  }
  if (!j["time"].is_number_integer()) {
    return vfail(FailureKind::malformed_response, "time", "expected an integer hour");
  }
  plan.time = j["time"].get<int>();
  if (plan.time < 0 || plan.time >= ctx.ticks_per_day) {
    return vfail(FailureKind::malformed_response, "time",
                 "hour out of range [0, " + std::to_string(ctx.ticks_per_day) + ")");
  }

  if (!j.contains("action")) {
    return vfail(FailureKind::malformed_response, "action", "missing required field");
  }
  if (!j["action"].is_string()) {
    return vfail(FailureKind::malformed_response, "action", "expected a string");
  }
  std::optional<ActionType> action = action_from_string(j["action"].get<std::string>());
  if (!action) {
    return vfail(FailureKind::malformed_response, "action",
                 "unknown action: " + j["action"].get<std::string>());
  }
  plan.action = *action;

  auto read_string = [&](const char* key, std::string& out) -> std::optional<ValidationFailure> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) {
      return vfail(FailureKind::malformed_response, key, "expected a string");
    }
    out = j[key].get<std::string>();
    return std::nullopt;
  };
  for (auto [key, slot] : {std::pair<const char*, std::string*>{"target", &plan.target},
                           {"item", &plan.item},
                           {"description", &plan.description},
                           {"energy_considerations", &plan.energy_considerations},
                           {"reasoning", &plan.reasoning}}) {
    if (auto f = read_string(key, *slot)) return *f;
  }

  const bool target_required = plan.action == ActionType::eat ||
                               plan.action == ActionType::travel ||
                               plan.action == ActionType::converse;
  if (target_required && plan.target.empty()) {
    return vfail(FailureKind::malformed_response, "target", "missing required field");
  }

  switch (plan.action) {
    case ActionType::travel:
      if (!known_location(ctx, plan.target)) {
        return vfail(FailureKind::unknown_location, "target", "no such location: " + plan.target);
      }
      break;

    case ActionType::eat: {
      if (plan.target == ctx.agent.residence) {
        if (ctx.home_available) break;
        if (ctx.agent.needs.grocery < ctx.constants.meal_grocery_cost) {
          return vfail(FailureKind::insufficient_grocery, "target",
                       "pantry too low to cook at home");
        }
        return vfail(FailureKind::shop_closed, "target",
                     "home kitchen is out of reach during the work block");
      }
      if (!known_location(ctx, plan.target)) {
        return vfail(FailureKind::unknown_location, "target", "no such location: " + plan.target);
      }
      const ShopOption* shop = find_option(ctx.dining_options, plan.target);
      if (!shop) {
        if (find_option(ctx.grocery_options, plan.target)) {
          return vfail(FailureKind::unknown_location, "target",
                       plan.target + " is a grocery store, not a restaurant");
        }
        if (ctx.closed_shops.count(plan.target)) {
          return vfail(FailureKind::shop_closed, "target", plan.target + " is closed right now");
        }
        return vfail(FailureKind::unknown_location, "target",
                     "no dining shop at " + plan.target);
      }
      if (auto f = check_purchase(ctx, *shop, "item", plan.item)) return *f;
      break;
    }

    case ActionType::shop_groceries: {
      const ShopOption* shop = nullptr;
      if (plan.target.empty()) {
        if (ctx.grocery_options.empty()) {
          return vfail(FailureKind::shop_closed, "target", "no grocery store is open right now");
        }
        shop = &ctx.grocery_options.front();
      } else {
        if (!known_location(ctx, plan.target)) {
          return vfail(FailureKind::unknown_location, "target", "no such location: " + plan.target);
        }
        shop = find_option(ctx.grocery_options, plan.target);
        if (!shop) {
          if (ctx.closed_shops.count(plan.target)) {
            return vfail(FailureKind::shop_closed, "target", plan.target + " is closed right now");
          }
          return vfail(FailureKind::unknown_location, "target",
                       "no grocery shop at " + plan.target);
        }
      }
      std::string item_name = plan.item;
      if (item_name.empty()) {
        // Default to the cheapest restocking item.
        const ItemOption* best = nullptr;
        for (const ItemOption& it : shop->items) {
          if (it.grocery_restore > 0 && (!best || it.price < best->price)) best = &it;
        }
        if (best) item_name = best->name;
      }
      if (auto f = check_purchase(ctx, *shop, "item", item_name)) return *f;
      break;
    }

    case ActionType::work:
      if (!ctx.agent.workplace) {
        return vfail(FailureKind::malformed_response, "action", "agent has no workplace");
      }
      if (!plan.target.empty() && !known_location(ctx, plan.target)) {
        return vfail(FailureKind::unknown_location, "target", "no such location: " + plan.target);
      }
      break;

    case ActionType::converse:
      if (std::find(ctx.known_agents.begin(), ctx.known_agents.end(), plan.target) ==
          ctx.known_agents.end()) {
        return vfail(FailureKind::unknown_location, "target", "no such agent: " + plan.target);
      }
      break;

    case ActionType::rest:
    case ActionType::skip:
      break;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Oracle policy
// ---------------------------------------------------------------------------

namespace {

struct MealCandidate {
  std::string location;
  std::string item;
  Cents price = 0;
  bool discounted = false;
  int energy = 0;
  int distance = 0;
  bool is_home = false;
};

double candidate_utility(const MealCandidate& c, const DecisionContext& ctx) {
  const SimConstants& k = ctx.constants;
  double u = -static_cast<double>(c.price) / 100.0;
  if (c.discounted) u += ctx.agent.deal_proneness * k.discount_bonus;
  u -= k.distance_cost * c.distance;
  if (!c.is_home) {
    auto it = ctx.visit_counts.find(c.location);
    if (it != ctx.visit_counts.end()) u += k.habit_bonus * it->second;
  }
  return u;
}

ActionPlan make_eat_plan(const DecisionContext& ctx, const MealCandidate& c,
                         const std::string& why) {
  ActionPlan plan;
  plan.time = ctx.now.tick;
  plan.action = ActionType::eat;
  plan.target = c.location;
  plan.item = c.is_home ? "" : c.item;
  plan.description = why + (c.is_home ? " at home" : " at " + c.location);
  plan.energy_considerations =
      "+" + std::to_string(c.energy) +
      (c.is_home ? " energy from a home-cooked meal" : " energy from restaurant meal");
  plan.reasoning = c.is_home ? "pantry stock is cheaper than eating out"
                             : (c.discounted ? "discounted price won the comparison"
                                             : "best mix of price, distance and habit");
  return plan;
}

std::optional<MealCandidate> best_meal_candidate(const DecisionContext& ctx) {
  std::vector<MealCandidate> candidates;
  for (const ShopOption& s : ctx.dining_options) {
    if (s.meal_item < 0) continue;
    const ItemOption& item = s.items[s.meal_item];
    if (item.price > ctx.agent.needs.money) continue;
    candidates.push_back({s.location, item.name, item.price, item.discounted,
                          item.energy_restore, s.distance, false});
  }
  if (ctx.home_available) {
    candidates.push_back({ctx.agent.residence, "", ctx.home_imputed_cost, false,
                          ctx.constants.home_meal_energy, ctx.home_distance, true});
  }
  if (candidates.empty()) return std::nullopt;
  const MealCandidate* best = nullptr;
  double best_u = 0.0;
  for (const MealCandidate& c : candidates) {
    const double u = candidate_utility(c, ctx);
    if (!best || u > best_u || (u == best_u && c.location < best->location)) {
      if (!best || u >= best_u) {
        // Ties break on the lexicographically smaller location name.
        if (best && u == best_u && !(c.location < best->location)) continue;
        best = &c;
        best_u = u;
      }
    }
  }
  MealCandidate out = *best;
  if (out.is_home) out.price = 0;  // imputed cost is not a cash outlay
  return out;
}

std::optional<MealCandidate> best_emergency_candidate(const DecisionContext& ctx) {
  std::optional<MealCandidate> best;
  auto better = [&](const MealCandidate& c) {
    if (!best) return true;
    if (c.energy != best->energy) return c.energy > best->energy;
    if (c.price != best->price) return c.price < best->price;
    if (c.location != best->location) return c.location < best->location;
    return c.item < best->item;
  };
  for (const ShopOption& s : ctx.dining_options) {
    for (const ItemOption& item : s.items) {
      if (item.energy_restore <= 0 || item.price > ctx.agent.needs.money) continue;
      MealCandidate c{s.location, item.name, item.price, item.discounted,
                      item.energy_restore, s.distance, false};
      if (better(c)) best = c;
    }
  }
  if (ctx.home_available) {
    MealCandidate c{ctx.agent.residence, "", 0, false, ctx.constants.home_meal_energy,
                    ctx.home_distance, true};
    if (better(c)) best = c;
  }
  return best;
}

const Commitment* commitment_due_now(const DecisionContext& ctx) {
  const Commitment* due = nullptr;
  for (const Commitment& c : ctx.commitments) {
    if (c.status != CommitmentStatus::pending) continue;
    if (c.scheduled.day != ctx.now.day || c.scheduled.tick != ctx.now.tick) continue;
    if (!due || c.location < due->location || (c.location == due->location && c.id < due->id)) {
      due = &c;
    }
  }
  return due;
}

}  // namespace

ActionPlan oracle_decide(const DecisionContext& ctx, std::uint64_t /*seed*/) {
  const AgentSnapshot& a = ctx.agent;
  ActionPlan plan;
  plan.time = ctx.now.tick;

  // Survival first: at or below the emergency threshold, food overrides
  // everything else.
  if (ctx.emergency) {
    if (auto c = best_emergency_candidate(ctx)) {
      ActionPlan p = make_eat_plan(ctx, *c, "Emergency meal");
      p.reasoning = "energy critically low; taking the most restorative affordable food";
      return p;
    }
    plan.action = ActionType::skip;
    plan.description = "Nothing affordable to eat";
    plan.energy_considerations = "energy critically low and falling";
    plan.reasoning = "no affordable food anywhere in town";
    return plan;
  }

  // Honor commitments scheduled for this exact tick.
  if (const Commitment* due = commitment_due_now(ctx)) {
    if (const ShopOption* shop = find_option(ctx.dining_options, due->location)) {
      const int idx = shop->meal_item >= 0 ? shop->meal_item : shop->any_item;
      if (idx >= 0 && shop->items[idx].price <= a.needs.money) {
        const ItemOption& item = shop->items[idx];
        MealCandidate c{shop->location, item.name, item.price, item.discounted,
                        item.energy_restore, shop->distance, false};
        ActionPlan p = make_eat_plan(ctx, c, "Meeting " + due->action);
        p.reasoning = "keeping a commitment made earlier";
        return p;
      }
    }
    if (a.position != due->location) {
      plan.action = ActionType::travel;
      plan.target = due->location;
      plan.description = "Heading to " + due->location + " for " + due->action;
      plan.energy_considerations = "travel costs energy per block";
      plan.reasoning = "keeping a commitment made earlier";
      return plan;
    }
    plan.action = ActionType::rest;
    plan.target = due->location;
    plan.description = "Waiting at " + due->location + " for " + due->action;
    plan.energy_considerations = "resting while waiting";
    plan.reasoning = "keeping a commitment made earlier";
    return plan;
  }

  // Meals next; the slot system marks one due at a time.
  if (ctx.meal_due) {
    if (auto c = best_meal_candidate(ctx)) {
      return make_eat_plan(ctx, *c, "Having " + ctx.meal_name);
    }
    plan.action = ActionType::skip;
    plan.description = "Skipping " + ctx.meal_name + ": nothing affordable";
    plan.energy_considerations = "missing a meal costs energy later";
    plan.reasoning = "no affordable option for this meal";
    return plan;
  }

  // Work block.
  if (a.workplace && ctx.now.tick >= a.work_start && ctx.now.tick < a.work_end) {
    plan.action = ActionType::work;
    plan.target = *a.workplace;
    plan.description = "Working at " + *a.workplace;
    plan.energy_considerations = "work drains extra energy";
    plan.reasoning = "scheduled work hours";
    return plan;
  }

  // Restock the pantry when flagged and a grocery store is open.
  if (ctx.shopping_flag && !ctx.grocery_options.empty()) {
    const ShopOption* best = nullptr;
    for (const ShopOption& s : ctx.grocery_options) {
      if (!best || s.distance < best->distance ||
          (s.distance == best->distance && s.location < best->location)) {
        best = &s;
      }
    }
    const ItemOption* item = nullptr;
    for (const ItemOption& it : best->items) {
      if (it.grocery_restore > 0 && (!item || it.price < item->price)) item = &it;
    }
    if (item && item->price <= a.needs.money) {
      plan.action = ActionType::shop_groceries;
      plan.target = best->location;
      plan.item = item->name;
      plan.description = "Restocking groceries at " + best->location;
      plan.energy_considerations = "travel costs energy per block";
      plan.reasoning = "pantry fell below the restock threshold";
      return plan;
    }
  }

  // Otherwise head home and rest.
  if (a.position != a.residence) {
    plan.action = ActionType::travel;
    plan.target = a.residence;
    plan.description = "Heading home to " + a.residence;
    plan.energy_considerations = "travel costs energy per block";
    plan.reasoning = "nothing pressing; going home";
    return plan;
  }
  plan.action = ActionType::rest;
  plan.target = a.residence;
  plan.description = "Resting at home";
  plan.energy_considerations = "only base energy decay while resting";
  plan.reasoning = "nothing pressing to do";
  return plan;
}

bool conversation_accepted(std::uint64_t seed, SimTime now, const std::string& initiator,
                           const std::string& partner, double partner_proximity) {
  const std::string key = initiator + "|" + partner + "|" + std::to_string(now.day) + ":" +
                          std::to_string(now.tick);
  return u01(hash_mix(seed, fnv1a64(key))) < partner_proximity;
}

ConversationTranscript oracle_converse(const DecisionContext& ctx, std::uint64_t seed) {
  ConversationTranscript t;
  if (!ctx.conversation) return t;
  const ConversationSetup& cv = *ctx.conversation;
  const std::string& me = ctx.agent.name;
  t.participants = {me, cv.partner};

  const bool accepted =
      conversation_accepted(seed, ctx.now, me, cv.partner, cv.partner_proximity) &&
      !cv.proposal_location.empty();

  t.lines.push_back({me, "Hey " + cv.partner + "! Good to see you at " + cv.location + "."});
  if (!cv.proposal_location.empty()) {
    t.lines.push_back({me, "Want to meet at " + cv.proposal_location + " at " +
                               std::to_string(cv.proposal_time.tick) + " tomorrow? My treat."});
    if (accepted) {
      t.lines.push_back({cv.partner, "Sure! See you at " + cv.proposal_location + "."});
      StructuredIntent intent;
      intent.kind = "commitment";
      intent.parties = {me, cv.partner};
      intent.location = cv.proposal_location;
      intent.scheduled = cv.proposal_time;
      intent.action = "meet up";
      t.intents.push_back(intent);
    } else {
      t.lines.push_back({cv.partner, "Sorry, I can't make it this time. Another day!"});
    }
  } else {
    t.lines.push_back({cv.partner, "Likewise! Take care."});
  }
  return t;
}

std::string ScriptedOracle::decide(const DecisionContext& ctx) {
  if (ctx.prompt_kind == PromptKind::conversation) {
    ConversationTranscript t = oracle_converse(ctx, seed_);
    json j;
    j["lines"] = json::array();
    for (const ConversationLine& line : t.lines) {
      j["lines"].push_back({{"speaker", line.speaker}, {"text", line.text}});
    }
    j["intents"] = json::array();
    for (const StructuredIntent& intent : t.intents) {
      j["intents"].push_back({{"kind", intent.kind},
                              {"parties", intent.parties},
                              {"location", intent.location},
                              {"day", intent.scheduled.day},
                              {"tick", intent.scheduled.tick},
                              {"action", intent.action}});
    }
    return j.dump();
  }
  return plan_to_json(oracle_decide(ctx, seed_));
}

// ---------------------------------------------------------------------------
// Retry loop
// ---------------------------------------------------------------------------

DecisionOutcome decide_with_retry(DecisionBackend& backend, DecisionContext ctx,
                                  int max_retries, std::uint64_t oracle_seed) {
  DecisionOutcome outcome;
  for (int attempt = 1; attempt <= max_retries + 1; ++attempt) {
    AttemptRecord record;
    record.attempt = attempt;
    record.prompt_chars = assemble_prompt(ctx).size();
    std::string raw;
    try {
      raw = backend.decide(ctx);
    } catch (const BackendTransientError& e) {
      record.failure = ValidationFailure{FailureKind::malformed_response, "transport", e.what()};
      outcome.attempts.push_back(std::move(record));
      ctx.feedback.push_back(std::string("transport: ") + e.what());
      continue;
    }
    record.raw = raw;
    ValidationResult result = validate_plan(raw, ctx);
    if (auto* plan = std::get_if<ActionPlan>(&result)) {
      outcome.attempts.push_back(std::move(record));
      outcome.plan = *plan;
      return outcome;
    }
    const ValidationFailure& f = std::get<ValidationFailure>(result);
    record.failure = f;
    outcome.attempts.push_back(std::move(record));
    ctx.feedback.push_back(to_string(f.kind) + " on field '" + f.field + "': " + f.detail);
  }
  // Backend exhausted its attempts: the oracle answers.
  outcome.used_fallback = true;
  ActionPlan plan = oracle_decide(ctx, oracle_seed);
  ValidationResult check = validate_plan(plan_to_json(plan), ctx);
  if (!std::holds_alternative<ActionPlan>(check)) {
    const ValidationFailure& f = std::get<ValidationFailure>(check);
    throw std::logic_error("oracle fallback produced an invalid plan: " + to_string(f.kind) +
                           " on " + f.field + ": " + f.detail);
  }
  outcome.plan = plan;
  return outcome;
}

// ---------------------------------------------------------------------------
// Conversation plumbing
// ---------------------------------------------------------------------------

std::optional<std::string> conversation_skip_reason(ActionType last_action, int energy,
                                                    const SimConstants& k) {
  if (last_action == ActionType::work) return "busy with working";
  if (energy <= k.conversation_min_energy) return "low-energy";
  if (last_action == ActionType::travel) return "rushing";
  return std::nullopt;
}

std::variant<ConversationTranscript, ValidationFailure> parse_conversation(
    const std::string& raw, const DecisionContext& ctx) {
  std::optional<std::string> block = extract_structured_block(raw);
  if (!block) {
    return vfail(FailureKind::malformed_response, "response",
                 "expected exactly one structured block");
  }
  json j = json::parse(*block, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return vfail(FailureKind::malformed_response, "response", "not a JSON object");
  }
  ConversationTranscript t;
  t.participants.push_back(ctx.agent.name);
  if (ctx.conversation) t.participants.push_back(ctx.conversation->partner);
  if (!j.contains("lines") || !j["lines"].is_array()) {
    return vfail(FailureKind::malformed_response, "lines", "missing lines array");
  }
  for (const json& line : j["lines"]) {
    if (!line.is_object() || !line.contains("speaker") || !line.contains("text") ||
        !line["speaker"].is_string() || !line["text"].is_string()) {
      return vfail(FailureKind::malformed_response, "lines", "each line needs speaker and text");
    }
    t.lines.push_back({line["speaker"].get<std::string>(), line["text"].get<std::string>()});
  }
  if (j.contains("intents")) {
    if (!j["intents"].is_array()) {
      return vfail(FailureKind::malformed_response, "intents", "expected an array");
    }
    for (const json& iv : j["intents"]) {
      if (!iv.is_object()) {
        return vfail(FailureKind::malformed_response, "intents", "expected objects");
      }
      StructuredIntent intent;
      if (iv.contains("kind") && iv["kind"].is_string()) intent.kind = iv["kind"].get<std::string>();
      if (iv.contains("parties") && iv["parties"].is_array()) {
        for (const json& p : iv["parties"]) {
          if (p.is_string()) intent.parties.push_back(p.get<std::string>());
        }
      }
      if (iv.contains("location") && iv["location"].is_string()) {
        intent.location = iv["location"].get<std::string>();
      }
      if (iv.contains("day") && iv["day"].is_number_integer()) {
        intent.scheduled.day = iv["day"].get<int>();
      }
      if (iv.contains("tick") && iv["tick"].is_number_integer()) {
        intent.scheduled.tick = iv["tick"].get<int>();
      }
      if (iv.contains("action") && iv["action"].is_string()) {
        intent.action = iv["action"].get<std::string>();
      }
      t.intents.push_back(std::move(intent));
    }
  }
  return t;
}

}  // namespace townsim
