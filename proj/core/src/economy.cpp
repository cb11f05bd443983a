#include "townsim/economy.hpp"

#include <cmath>
#include <stdexcept>

namespace townsim {

Cents final_price(Cents base, double discount_rate) {
  if (!(discount_rate >= 0.0) || discount_rate >= 1.0) {
    throw std::invalid_argument("discount rate must be in [0, 1)");
  }
  if (base < 0) throw std::invalid_argument("price must be >= 0");
  const long long keep_ppm = 1000000LL - std::llround(discount_rate * 1e6);
  const long long numerator = static_cast<long long>(base) * keep_ppm;
  return static_cast<Cents>((numerator + 500000LL) / 1000000LL);  // half-up
}

double effective_rate(const Shop& shop, const std::string& item, int day) {
  double best = 0.0;
  for (const DiscountWindow& d : shop.discounts) {
    if (d.active_on(day) && d.covers(item) && d.rate > best) best = d.rate;
  }
  return best;
}

Cents effective_price(const Shop& shop, const MenuItem& item, int day) {
  return final_price(item.base_price, effective_rate(shop, item.name, day));
}

void tick_decay(NeedsState& needs, Activity activity, int travel_distance,
                const SimConstants& k) {
  int drain = k.base_decay;
  if (activity == Activity::work) drain += k.work_decay;
  if (activity == Activity::travel) drain += travel_distance * k.travel_cost;
  needs.energy = clamp_level(needs.energy - drain);
}

void apply_travel_cost(NeedsState& needs, int distance, const SimConstants& k) {
  needs.energy = clamp_level(needs.energy - distance * k.travel_cost);
}

HomeMealResult apply_home_meal(NeedsState& needs, const SimConstants& k) {
  HomeMealResult r;
  if (needs.grocery < k.meal_grocery_cost) return r;  // refused
  needs.grocery -= k.meal_grocery_cost;
  needs.energy = clamp_level(needs.energy + k.home_meal_energy);
  r.ok = true;
  r.shopping_flag = needs.grocery < k.grocery_threshold;
  return r;
}

void apply_purchase(NeedsState& needs, const MenuItem& item, Cents price) {
  if (price > needs.money) {
    throw std::logic_error("purchase would overdraft the agent");
  }
  needs.money -= price;
  needs.energy = clamp_level(needs.energy + item.energy_restore);
  needs.grocery = clamp_level(needs.grocery + item.grocery_restore);
}

EnergyStatus energy_status(int energy, const SimConstants& k) {
  if (energy <= 0) return EnergyStatus::collapsed;
  if (energy <= k.emergency_threshold) return EnergyStatus::emergency;
  return EnergyStatus::ok;
}

}  // namespace townsim
