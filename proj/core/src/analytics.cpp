#include "townsim/analytics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace townsim {

using json = nlohmann::json;

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

int max_event_day(const std::vector<Event>& events) {
  int days = 0;
  for (const Event& e : events) days = std::max(days, e.day);
  return days;
}

}  // namespace

Cents DailySales::dining_total(int day) const {
  Cents total = 0;
  auto it = by_day.find(day);
  if (it == by_day.end()) return 0;
  for (const std::string& shop : dining_shops) {
    auto sit = it->second.find(shop);
    if (sit != it->second.end()) total += sit->second.revenue;
  }
  return total;
}

Cents DailySales::food_total(int day) const {
  Cents total = dining_total(day);
  auto it = by_day.find(day);
  if (it == by_day.end()) return total;
  for (const std::string& shop : grocery_shops) {
    auto sit = it->second.find(shop);
    if (sit != it->second.end()) total += sit->second.revenue;
  }
  return total;
}

double DailySales::share(int day, const std::string& shop) const {
  if (std::find(dining_shops.begin(), dining_shops.end(), shop) == dining_shops.end()) {
    return 0.0;  // shares are defined over the dining market only
  }
  const Cents total = dining_total(day);
  if (total == 0) return 0.0;
  auto it = by_day.find(day);
  if (it == by_day.end()) return 0.0;
  auto sit = it->second.find(shop);
  if (sit == it->second.end()) return 0.0;
  return static_cast<double>(sit->second.revenue) / static_cast<double>(total);
}

Cents DailySales::total_food() const {
  Cents total = 0;
  for (int day = 1; day <= days; ++day) total += food_total(day);
  return total;
}

DailySales daily_sales(const std::vector<Event>& events, int days) {
  DailySales out;
  out.days = days > 0 ? days : max_event_day(events);
  std::set<std::string> dining, grocery;
  for (const Event& e : events) {
    if (e.kind != EventKind::purchase) continue;
    const std::string shop = e.payload.at("location").get<std::string>();
    const std::string kind = e.payload.at("location_kind").get<std::string>();
    const Cents final_cents = e.payload.at("final_cents").get<Cents>();
    ShopDay& cell = out.by_day[e.day][shop];
    cell.revenue += final_cents;
    cell.transactions += 1;
    (kind == "grocery" ? grocery : dining).insert(shop);
  }
  out.dining_shops.assign(dining.begin(), dining.end());
  out.grocery_shops.assign(grocery.begin(), grocery.end());
  // Zero-fill so every (day, shop) cell exists; reports stay rectangular.
  for (int day = 1; day <= out.days; ++day) {
    for (const std::string& shop : out.dining_shops) out.by_day[day][shop];
    for (const std::string& shop : out.grocery_shops) out.by_day[day][shop];
  }
  return out;
}

LoyaltyMatrix loyalty_matrix(const std::vector<Event>& events, int days) {
  LoyaltyMatrix out;
  out.days = days > 0 ? days : max_event_day(events);
  for (const Event& e : events) {
    if (e.kind != EventKind::purchase) continue;
    if (e.payload.at("location_kind").get<std::string>() != "dining") continue;
    const std::string shop = e.payload.at("location").get<std::string>();
    out.visits[e.agent][shop][e.day] += 1;
  }
  for (const auto& [agent, shops] : out.visits) {
    for (const auto& [shop, by_day] : shops) {
      int best = 0, run = 0;
      for (int day = 1; day <= out.days; ++day) {
        auto it = by_day.find(day);
        run = (it != by_day.end() && it->second > 0) ? run + 1 : 0;
        best = std::max(best, run);
      }
      out.max_streak[agent][shop] = best;
    }
  }
  return out;
}

SubstitutionReport substitution_report(const DailySales& baseline, const DailySales& treated,
                                       const std::string& focus_shop,
                                       const std::vector<int>& discount_days,
                                       double tolerance) {
  SubstitutionReport r;
  r.focus_shop = focus_shop;
  r.discount_days = discount_days;
  r.tolerance = tolerance;

  std::set<std::string> shops(baseline.dining_shops.begin(), baseline.dining_shops.end());
  shops.insert(treated.dining_shops.begin(), treated.dining_shops.end());
  const int days = std::max(baseline.days, treated.days);
  const std::set<int> discount_set(discount_days.begin(), discount_days.end());

  for (const std::string& shop : shops) {
    std::vector<ShareDelta> rows;
    for (int day = 1; day <= days; ++day) {
      ShareDelta d;
      d.day = day;
      d.baseline = baseline.share(day, shop);
      d.treated = treated.share(day, shop);
      d.delta = d.treated - d.baseline;
      d.discount_day = discount_set.count(day) != 0;
      rows.push_back(d);
    }
    r.per_shop[shop] = std::move(rows);
  }

  r.baseline_total = baseline.total_food();
  r.treated_total = treated.total_food();
  r.relative_total_change =
      r.baseline_total == 0
          ? 0.0
          : static_cast<double>(r.treated_total - r.baseline_total) /
                static_cast<double>(r.baseline_total);

  bool share_gain_on_discount_days = !discount_days.empty() && r.per_shop.count(focus_shop) > 0;
  if (share_gain_on_discount_days) {
    for (const ShareDelta& d : r.per_shop.at(focus_shop)) {
      if (d.discount_day && d.delta <= 0.0) {
        share_gain_on_discount_days = false;
        break;
      }
    }
  }
  r.substitution_dominant = share_gain_on_discount_days &&
                            std::abs(r.relative_total_change) < tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string daily_sales_csv(const DailySales& sales) {
  std::string out = "day,shop,kind,revenue,transactions\n";
  const std::set<std::string> grocery(sales.grocery_shops.begin(), sales.grocery_shops.end());
  for (int day = 1; day <= sales.days; ++day) {
    auto it = sales.by_day.find(day);
    if (it == sales.by_day.end()) continue;
    for (const auto& [shop, cell] : it->second) {
      out += std::to_string(day) + "," + shop + "," +
             (grocery.count(shop) ? "grocery" : "dining") + "," + format_money(cell.revenue) +
             "," + std::to_string(cell.transactions) + "\n";
    }
  }
  return out;
}

std::string market_share_csv(const DailySales& sales) {
  std::string out = "day,shop,revenue,share\n";
  for (int day = 1; day <= sales.days; ++day) {
    for (const std::string& shop : sales.dining_shops) {
      Cents revenue = 0;
      auto it = sales.by_day.find(day);
      if (it != sales.by_day.end()) {
        auto sit = it->second.find(shop);
        if (sit != it->second.end()) revenue = sit->second.revenue;
      }
      out += std::to_string(day) + "," + shop + "," + format_money(revenue) + "," +
             fixed6(sales.share(day, shop)) + "\n";
    }
  }
  return out;
}

// Emits both visit encodings side by side: per-day purchase counts (dayN
// columns) and the binary visited/not flag (visited_dayN columns).
std::string choice_matrix_csv(const LoyaltyMatrix& loyalty) {
  std::string out = "agent,shop,total_visits,days_visited,max_streak";
  for (int day = 1; day <= loyalty.days; ++day) out += ",day" + std::to_string(day);
  for (int day = 1; day <= loyalty.days; ++day) out += ",visited_day" + std::to_string(day);
  out += "\n";
  for (const auto& [agent, shops] : loyalty.visits) {
    for (const auto& [shop, by_day] : shops) {
      int total = 0;
      int days_visited = 0;
      for (const auto& [day, n] : by_day) {
        total += n;
        if (n > 0) ++days_visited;
      }
      out += agent + "," + shop + "," + std::to_string(total) + "," +
             std::to_string(days_visited) + "," +
             std::to_string(loyalty.max_streak.at(agent).at(shop));
      for (int day = 1; day <= loyalty.days; ++day) {
        auto it = by_day.find(day);
        out += "," + std::to_string(it == by_day.end() ? 0 : it->second);
      }
      for (int day = 1; day <= loyalty.days; ++day) {
        auto it = by_day.find(day);
        out += (it != by_day.end() && it->second > 0) ? ",1" : ",0";
      }
      out += "\n";
    }
  }
  return out;
}

std::string substitution_report_csv(const SubstitutionReport& report) {
  std::string out = "shop,day,baseline_share,treated_share,delta,discount_day\n";
  for (const auto& [shop, rows] : report.per_shop) {
    for (const ShareDelta& d : rows) {
      out += shop + "," + std::to_string(d.day) + "," + fixed6(d.baseline) + "," +
             fixed6(d.treated) + "," + fixed6(d.delta) + "," + (d.discount_day ? "1" : "0") +
             "\n";
    }
  }
  return out;
}

json substitution_report_json(const SubstitutionReport& report) {
  json j;
  j["focus_shop"] = report.focus_shop;
  j["discount_days"] = report.discount_days;
  j["tolerance"] = report.tolerance;
  j["baseline_food_total_cents"] = report.baseline_total;
  j["treated_food_total_cents"] = report.treated_total;
  j["relative_total_change"] = report.relative_total_change;
  j["substitution_dominant"] = report.substitution_dominant;
  json shops = json::object();
  for (const auto& [shop, rows] : report.per_shop) {
    json arr = json::array();
    for (const ShareDelta& d : rows) {
      arr.push_back({{"day", d.day},
                     {"baseline_share", d.baseline},
                     {"treated_share", d.treated},
                     {"delta", d.delta},
                     {"discount_day", d.discount_day}});
    }
    shops[shop] = std::move(arr);
  }
  j["shops"] = std::move(shops);
  return j;
}

json run_summary_json(const RunResult& result) {
  json j;
  j["scenario"] = result.scenario_name;
  j["seed"] = result.seed;
  j["mode"] = to_string(result.mode);
  j["backend"] = result.backend_name;
  j["days"] = result.days;
  j["ticks_per_day"] = result.ticks_per_day;
  j["event_count"] = result.events.size();

  json agents = json::object();
  for (const auto& [name, f] : result.finals) {
    agents[name] = {{"position", f.position},
                    {"energy", f.needs.energy},
                    {"grocery", f.needs.grocery},
                    {"money_cents", f.needs.money},
                    {"meals_eaten", f.meals_eaten},
                    {"meals_skipped", f.meals_skipped},
                    {"conversations", f.conversations},
                    {"purchases", f.purchases},
                    {"total_income_cents", f.total_income},
                    {"total_spent_cents", f.total_spent}};
  }
  j["agents"] = std::move(agents);

  json shops = json::object();
  for (const auto& [shop, revenue] : result.shop_revenue) {
    shops[shop] = {{"revenue_cents", revenue}};
  }
  j["shops"] = std::move(shops);

  json discounts = json::object();
  for (const auto& [shop, days] : result.discount_days) discounts[shop] = days;
  j["discount_days"] = std::move(discounts);

  int fulfilled = 0, broken = 0, pending = 0;
  for (const Commitment& c : result.commitments) {
    if (c.status == CommitmentStatus::fulfilled) ++fulfilled;
    else if (c.status == CommitmentStatus::broken) ++broken;
    else ++pending;
  }
  j["commitments"] = {{"total", result.commitments.size()},
                      {"fulfilled", fulfilled},
                      {"broken", broken},
                      {"pending", pending}};
  return j;
}

namespace {

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + file.string());
  out << text;
}

}  // namespace

void write_run_reports(const std::filesystem::path& dir, const RunResult& result) {
  std::filesystem::create_directories(dir);
  write_events_jsonl(result.events, dir / "events.jsonl");
  const DailySales sales = daily_sales(result.events, result.days);
  write_text(dir / "daily_sales.csv", daily_sales_csv(sales));
  write_text(dir / "market_share.csv", market_share_csv(sales));
  write_text(dir / "choice_matrix.csv", choice_matrix_csv(loyalty_matrix(result.events, result.days)));
  write_text(dir / "summary.json", run_summary_json(result).dump(2) + "\n");
}

void write_event_reports(const std::filesystem::path& dir, const std::vector<Event>& events,
                         int days) {
  std::filesystem::create_directories(dir);
  const DailySales sales = daily_sales(events, days);
  write_text(dir / "daily_sales.csv", daily_sales_csv(sales));
  write_text(dir / "market_share.csv", market_share_csv(sales));
  write_text(dir / "choice_matrix.csv", choice_matrix_csv(loyalty_matrix(events, days)));
}

void write_comparison_reports(const std::filesystem::path& dir,
                              const SubstitutionReport& report) {
  std::filesystem::create_directories(dir);
  write_text(dir / "substitution_report.csv", substitution_report_csv(report));
  write_text(dir / "substitution_report.json", substitution_report_json(report).dump(2) + "\n");
}

}  // namespace townsim
