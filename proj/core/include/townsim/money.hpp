#pragma once

#include <cstdint>
#include <string>

namespace townsim {

// All balances and prices are integer cents. Scenario files carry dollar
// amounts (12.00, "9.6", 150); conversion happens once at the parse boundary
// so that every later sum reconciles exactly.
using Cents = std::int64_t;

// Rounds to the nearest cent; half-up. Throws std::invalid_argument on
// non-finite input.
Cents cents_from_dollars(double dollars);

// Accepts "12", "12.3", "12.34", optional leading '-'. Throws
// std::invalid_argument on anything else (including >2 decimals).
Cents parse_money(const std::string& text);

// "12.00", "-0.05". No currency symbol, always two decimals.
std::string format_money(Cents cents);

}  // namespace townsim
