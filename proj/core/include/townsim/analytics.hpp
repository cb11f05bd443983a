#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "townsim/engine.hpp"
#include "townsim/events.hpp"
#include "townsim/money.hpp"

namespace townsim {

// Everything here derives from the event log alone (purchase events carry the
// shop kind and settled price), so saved logs can be re-analyzed offline.

struct ShopDay {
  Cents revenue = 0;
  int transactions = 0;
  bool operator==(const ShopDay&) const = default;
};

struct DailySales {
  int days = 0;
  std::map<int, std::map<std::string, ShopDay>> by_day;  // day -> shop -> tally
  std::vector<std::string> dining_shops;                 // sorted
  std::vector<std::string> grocery_shops;                // sorted

  Cents dining_total(int day) const;
  Cents food_total(int day) const;  // dining + grocery spend
  // Share of the day's dining revenue (market share over restaurants only);
  // 0 when the dining market had no sales that day.
  double share(int day, const std::string& shop) const;
  Cents total_food() const;  // across all days
};

DailySales daily_sales(const std::vector<Event>& events, int days);

struct LoyaltyMatrix {
  int days = 0;
  // agent -> shop -> per-day visit counts (purchases at dining shops).
  std::map<std::string, std::map<std::string, std::map<int, int>>> visits;
  // agent -> shop -> longest run of consecutive days with at least one visit.
  std::map<std::string, std::map<std::string, int>> max_streak;
};

LoyaltyMatrix loyalty_matrix(const std::vector<Event>& events, int days);

struct ShareDelta {
  int day = 0;
  double baseline = 0.0;
  double treated = 0.0;
  double delta = 0.0;
  bool discount_day = false;
  bool operator==(const ShareDelta&) const = default;
};

// A/B readout: per-shop dining-share deltas by day plus the overall food-spend
// change. "Substitution dominant" means the discount moved share toward the
// focus shop on every discount day while total food spend stayed within the
// tolerance band.
struct SubstitutionReport {
  std::string focus_shop;
  std::vector<int> discount_days;
  double tolerance = 0.10;
  std::map<std::string, std::vector<ShareDelta>> per_shop;
  Cents baseline_total = 0;
  Cents treated_total = 0;
  double relative_total_change = 0.0;
  bool substitution_dominant = false;
};

SubstitutionReport substitution_report(const DailySales& baseline, const DailySales& treated,
                                       const std::string& focus_shop,
                                       const std::vector<int>& discount_days, double tolerance);

// ---------------------------------------------------------------------------
// Report files (byte-stable; money in dollars with two decimals, shares with
// six decimals)
// ---------------------------------------------------------------------------

std::string daily_sales_csv(const DailySales& sales);
std::string market_share_csv(const DailySales& sales);
std::string choice_matrix_csv(const LoyaltyMatrix& loyalty);
std::string substitution_report_csv(const SubstitutionReport& report);
nlohmann::json substitution_report_json(const SubstitutionReport& report);

nlohmann::json run_summary_json(const RunResult& result);

// events.jsonl + daily_sales.csv + market_share.csv + choice_matrix.csv +
// summary.json into `dir` (created if missing).
void write_run_reports(const std::filesystem::path& dir, const RunResult& result);

// The three CSV reports recomputed from a saved log (replay path).
void write_event_reports(const std::filesystem::path& dir, const std::vector<Event>& events,
                         int days);

// substitution_report.csv + substitution_report.json into `dir`.
void write_comparison_reports(const std::filesystem::path& dir,
                              const SubstitutionReport& report);

}  // namespace townsim
