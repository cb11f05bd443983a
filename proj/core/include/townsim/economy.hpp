#pragma once

#include <string>

#include "townsim/money.hpp"
#include "townsim/world.hpp"

namespace townsim {

// The grocery/energy/finance needs triad. Bounds are hard invariants:
// energy and grocery in [0,100], money never negative.
struct NeedsState {
  int energy = 100;
  int grocery = 60;
  Cents money = 0;
  bool operator==(const NeedsState&) const = default;
};

inline int clamp_level(int v) { return v < 0 ? 0 : (v > 100 ? 100 : v); }

// Discounted price: base * (1 - rate), rounded half-up to the cent. The rate
// is snapped to parts-per-million so decimal rates (0.20, 0.33, ...) compute
// exactly in integer arithmetic. Throws std::invalid_argument unless
// 0 <= rate < 1.
Cents final_price(Cents base, double discount_rate);

// Highest discount rate applying to `item` at this shop on `day` (0.0 if none).
double effective_rate(const Shop& shop, const std::string& item, int day);

Cents effective_price(const Shop& shop, const MenuItem& item, int day);

// ---------------------------------------------------------------------------
// Per-tick needs dynamics
// ---------------------------------------------------------------------------

enum class Activity { idle, travel, work };

// idle: -base_decay; work: -(base_decay + work_decay);
// travel: -(base_decay + distance * travel_cost). Clamped at 0.
void tick_decay(NeedsState& needs, Activity activity, int travel_distance,
                const SimConstants& k);

// Deducts the travel leg's energy cost alone (used when a travel action is
// executed inside a tick whose base decay is applied separately).
void apply_travel_cost(NeedsState& needs, int distance, const SimConstants& k);

struct HomeMealResult {
  bool ok = false;            // false: pantry too low, meal refused
  bool shopping_flag = false; // grocery fell below the restock threshold
};

// Consumes meal_grocery_cost pantry stock for +home_meal_energy.
HomeMealResult apply_home_meal(NeedsState& needs, const SimConstants& k);

// Pays for and consumes a menu item. The caller must have verified
// affordability; throws std::logic_error on overdraft (engine invariant).
void apply_purchase(NeedsState& needs, const MenuItem& item, Cents price);

enum class EnergyStatus { ok, emergency, collapsed };

// collapsed at 0; emergency at or below the threshold; ok above it.
EnergyStatus energy_status(int energy, const SimConstants& k);

}  // namespace townsim
