#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "townsim/economy.hpp"
#include "townsim/memory.hpp"
#include "townsim/world.hpp"

namespace townsim {

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

enum class ActionType { eat, travel, work, shop_groceries, rest, converse, skip };

std::string to_string(ActionType a);
std::optional<ActionType> action_from_string(const std::string& s);

struct ActionPlan {
  int time = 0;  // tick-of-day the plan is for
  ActionType action = ActionType::rest;
  std::string target;  // location name (or agent name for converse)
  std::string item;    // optional menu item for eat / shop_groceries
  std::string description;
  std::string energy_considerations;
  std::string reasoning;
  bool operator==(const ActionPlan&) const = default;
};

// Wire format: one JSON object with the fields above. Backends may wrap it in
// a fenced code block; extra fields are ignored, missing required fields are
// a malformed response.
std::string plan_to_json(const ActionPlan& plan);

// ---------------------------------------------------------------------------
// Context handed to backends (the grounding whitelist)
// ---------------------------------------------------------------------------

enum class PromptKind { daily_plan, dining, conversation, work };

std::string to_string(PromptKind k);

struct ItemOption {
  std::string name;
  Cents base_price = 0;
  Cents price = 0;  // effective today
  bool discounted = false;
  int energy_restore = 0;
  int grocery_restore = 0;
};

struct ShopOption {
  std::string location;
  LocationKind kind = LocationKind::dining;
  int distance = 0;  // grid units from the agent's position
  std::vector<ItemOption> items;
  // Index into items: cheapest item satisfying the current meal slot's
  // min_energy (-1 when no item qualifies).
  int meal_item = -1;
  // Index of the cheapest item regardless of restore value.
  int any_item = -1;
};

struct AgentSnapshot {
  std::string name;
  int age = 30;
  std::string occupation;
  std::string position;
  std::string residence;
  std::optional<std::string> workplace;
  int work_start = 9;
  int work_end = 17;
  double deal_proneness = 0.5;
  NeedsState needs;
};

struct ConversationSetup {
  std::string partner;
  double proximity = 0.0;          // initiator -> partner
  double partner_proximity = 0.0;  // partner -> initiator (acceptance odds)
  std::string location;            // where they are standing
  SimTime proposal_time;           // suggested meetup slot
  std::string proposal_location;   // suggested meetup place
};

struct DecisionContext {
  AgentSnapshot agent;
  SimTime now;
  int ticks_per_day = 24;
  PromptKind prompt_kind = PromptKind::daily_plan;
  bool emergency = false;  // energy at or below the emergency threshold

  std::vector<std::string> known_locations;  // every location; the whitelist
  std::vector<std::string> known_agents;
  std::vector<ShopOption> dining_options;   // open dining shops
  std::vector<ShopOption> grocery_options;  // open grocery shops
  std::set<std::string> closed_shops;       // shop locations currently closed

  bool meal_due = false;
  std::string meal_name;
  int meal_min_energy = 0;

  bool home_available = false;  // pantry is stocked and cooking is possible now
  int home_distance = 0;
  Cents home_imputed_cost = 0;

  bool shopping_flag = false;  // pantry below the restock threshold

  std::vector<MemoryEntry> memories;     // top-k retrieval for the prompt
  std::vector<Commitment> commitments;   // pending, this agent's
  std::map<std::string, int> visit_counts;  // recent purchases per shop

  std::optional<ConversationSetup> conversation;

  std::vector<std::string> feedback;  // validation failures from prior attempts

  SimConstants constants;
};

// Deterministic prompt template. The whitelist section lists every known
// location exactly once under the header line used by tests.
std::string assemble_prompt(const DecisionContext& ctx);

// ---------------------------------------------------------------------------
// Validation (grounding)
// ---------------------------------------------------------------------------

enum class FailureKind {
  unknown_location,
  unknown_menu_item,
  insufficient_funds,
  insufficient_grocery,
  shop_closed,
  malformed_response,
};

std::string to_string(FailureKind k);

struct ValidationFailure {
  FailureKind kind = FailureKind::malformed_response;
  std::string field;   // offending field name
  std::string detail;
};

using ValidationResult = std::variant<ActionPlan, ValidationFailure>;

// Parses a raw backend response (bare JSON or exactly one fenced block) and
// checks it against the context: the action/target must be executable in the
// current world, purchased items must be on the shop's menu, and the cost
// must fit the agent's balance.
ValidationResult validate_plan(const std::string& raw, const DecisionContext& ctx);

// Finds the structured block in a backend response: exactly one fenced
// ``` ... ``` block, or the whole text when it is bare JSON. Returns nullopt
// when there is no block or more than one.
std::optional<std::string> extract_structured_block(const std::string& raw);

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

// Permanent backend outage; the engine aborts the run and flushes the partial
// log when this reaches it.
struct BackendUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One failed call (transport error, timeout); decide_with_retry treats it as
// a failed attempt and keeps going.
struct BackendTransientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DecisionBackend {
 public:
  virtual ~DecisionBackend() = default;
  virtual std::string name() const = 0;
  // Returns the raw response text for the given context (action plan JSON,
  // or a conversation JSON when ctx.prompt_kind == conversation).
  virtual std::string decide(const DecisionContext& ctx) = 0;
};

// Deterministic utility-maximizing policy; a pure function of (context, seed).
ActionPlan oracle_decide(const DecisionContext& ctx, std::uint64_t seed);

// The oracle's conversation: greeting lines plus, when the acceptance draw
// (seeded, probability = partner proximity) succeeds, one commitment intent
// for the suggested meetup.
ConversationTranscript oracle_converse(const DecisionContext& ctx, std::uint64_t seed);

class ScriptedOracle : public DecisionBackend {
 public:
  explicit ScriptedOracle(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "oracle"; }
  std::string decide(const DecisionContext& ctx) override;

 private:
  std::uint64_t seed_;
};

// Test/replay backend wrapping a function.
class StubBackend : public DecisionBackend {
 public:
  using Fn = std::function<std::string(const DecisionContext&)>;
  explicit StubBackend(Fn fn, std::string name = "stub")
      : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::string decide(const DecisionContext& ctx) override { return fn_(ctx); }

 private:
  Fn fn_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Retry loop
// ---------------------------------------------------------------------------

struct AttemptRecord {
  int attempt = 1;
  std::size_t prompt_chars = 0;
  std::string raw;
  std::optional<ValidationFailure> failure;  // empty on the accepted attempt
};

struct DecisionOutcome {
  ActionPlan plan;
  std::vector<AttemptRecord> attempts;
  bool used_fallback = false;
};

// Calls the backend, validates, and on failure re-prompts with the failure
// reason appended, up to max_retries extra attempts; after that the scripted
// oracle answers (its plan always validates). Transient backend errors count
// as failed attempts; BackendUnavailable propagates.
DecisionOutcome decide_with_retry(DecisionBackend& backend, DecisionContext ctx,
                                  int max_retries, std::uint64_t oracle_seed);

// ---------------------------------------------------------------------------
// Conversation plumbing shared by oracle and remote backends
// ---------------------------------------------------------------------------

// Why an agent sits out the social check this tick, if it must.
// Working beats low energy beats rushing when several apply.
std::optional<std::string> conversation_skip_reason(ActionType last_action,
                                                    int energy,
                                                    const SimConstants& k);

// Parses a conversation response: {"lines":[{"speaker","text"}...],
// "intents":[{"kind","parties","location","day","tick","action"}...]}.
std::variant<ConversationTranscript, ValidationFailure> parse_conversation(
    const std::string& raw, const DecisionContext& ctx);

// The seeded acceptance draw used by the oracle.
bool conversation_accepted(std::uint64_t seed, SimTime now, const std::string& initiator,
                           const std::string& partner, double partner_proximity);

}  // namespace townsim
