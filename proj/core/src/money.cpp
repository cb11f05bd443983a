#include "townsim/money.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace townsim {

Cents cents_from_dollars(double dollars) {
  if (!std::isfinite(dollars)) {
    throw std::invalid_argument("money amount is not finite");
  }
  return static_cast<Cents>(std::llround(dollars * 100.0));
}

Cents parse_money(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("empty money literal");
  std::size_t i = 0;
  bool negative = false;
  if (text[i] == '-') {
    negative = true;
    ++i;
  }
  if (i >= text.size()) throw std::invalid_argument("bad money literal: " + text);
  Cents whole = 0;
  bool any_digit = false;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
    whole = whole * 10 + (text[i] - '0');
    any_digit = true;
    ++i;
  }
  Cents frac = 0;
  if (i < text.size()) {
    if (text[i] != '.') throw std::invalid_argument("bad money literal: " + text);
    ++i;
    int places = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      frac = frac * 10 + (text[i] - '0');
      ++places;
      ++i;
    }
    if (places == 0 || places > 2 || i != text.size()) {
      throw std::invalid_argument("bad money literal: " + text);
    }
    if (places == 1) frac *= 10;
    any_digit = true;
  }
  if (!any_digit) throw std::invalid_argument("bad money literal: " + text);
  Cents cents = whole * 100 + frac;
  return negative ? -cents : cents;
}

std::string format_money(Cents cents) {
  const bool negative = cents < 0;
  const Cents abs = negative ? -cents : cents;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%lld.%02lld", negative ? "-" : "",
                static_cast<long long>(abs / 100), static_cast<long long>(abs % 100));
  return buf;
}

}  // namespace townsim
