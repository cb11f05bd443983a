#include "doctest.h"

#include <set>

#include "test_support.hpp"
#include "townsim/world.hpp"

using namespace townsim;
using support::Rand;

TEST_CASE("time arithmetic") {
  CHECK(to_ticks(SimTime{1, 0}, 24) == 24);
  CHECK(to_ticks(SimTime{1, 23}, 24) == 47);
  CHECK(to_ticks(SimTime{2, 0}, 24) == 48);
  CHECK(to_ticks(SimTime{0, 12}, 24) == 12);    // pre-run seed days
  CHECK(to_ticks(SimTime{-1, 6}, 24) == -18);
  CHECK(SimTime{1, 5} < SimTime{1, 6});
  CHECK(SimTime{1, 23} < SimTime{2, 0});
  CHECK_FALSE(SimTime{2, 0} < SimTime{2, 0});
}

TEST_CASE("grid distance between named locations") {
  const Scenario& s = support::reference_scenario();

  // Two shops three blocks either side of the town center: six blocks apart.
  CHECK(travel_distance(s.map, "Coffee Shop", "Local Diner") == 6);
  CHECK(travel_distance(s.map, "Coffee Shop", "Coffee Shop") == 0);
  CHECK_THROWS_AS(travel_distance(s.map, "Coffee Shop", "Narnia"), UnknownLocation);

  // Cross-check every pair against a shortest-path search over the full
  // walk graph (locations + waypoints, Manhattan edge weights).
  const auto oracle = support::distance_oracle(s.map);
  for (const auto& [a, la] : s.map.locations) {
    for (const auto& [b, lb] : s.map.locations) {
      const int got = travel_distance(s.map, a, b);
      CHECK(got == oracle.at({a, b}));
      CHECK(got == travel_distance(s.map, b, a));  // symmetry
      CHECK(got >= 0);
    }
  }

  // Triangle inequality over sampled triples.
  Rand r(11);
  std::vector<std::string> names;
  for (const auto& [name, loc] : s.map.locations) names.push_back(name);
  for (int i = 0; i < 200; ++i) {
    const auto& a = r.pick(names);
    const auto& b = r.pick(names);
    const auto& c = r.pick(names);
    CHECK(travel_distance(s.map, a, c) <=
          travel_distance(s.map, a, b) + travel_distance(s.map, b, c));
  }
}

TEST_CASE("reference scenario parses with inferred kinds") {
  const Scenario& s = support::reference_scenario();
  CHECK(s.name == "reference-town");
  CHECK(s.agents.size() == 11);
  CHECK(s.map.locations.size() == 10);
  CHECK(s.map.shops.size() == 4);
  CHECK(s.sim.days == 7);
  CHECK(s.sim.seed == 42);

  CHECK(s.map.location("Fried Chicken Shop").kind == LocationKind::dining);
  CHECK(s.map.location("Grocery Store").kind == LocationKind::grocery);
  CHECK(s.map.location("Oak View Condos").kind == LocationKind::residence);
  CHECK(s.map.location("Tech Office").kind == LocationKind::workplace);
  CHECK(s.map.location("Town Park").kind == LocationKind::leisure);

  const Shop& fc = *s.map.shop_at("Fried Chicken Shop");
  REQUIRE(fc.discounts.size() == 1);
  CHECK(fc.discounts[0].start_day == 3);
  CHECK(fc.discounts[0].end_day == 4);
  CHECK(fc.discounts[0].rate == doctest::Approx(0.2));
  CHECK(fc.discounts[0].active_on(3));
  CHECK(fc.discounts[0].active_on(4));
  CHECK_FALSE(fc.discounts[0].active_on(2));
  CHECK_FALSE(fc.discounts[0].active_on(5));

  // Habit seeding: every Local Diner regular carries 12 prior visits.
  int seeded = 0;
  for (const Persona& p : s.agents) {
    if (p.seed_memories.empty()) continue;
    ++seeded;
    CHECK(p.seed_memories.size() == 12);
    for (const SeedMemory& m : p.seed_memories) {
      CHECK(m.kind == "purchase");
      CHECK(m.location == "Local Diner");
      CHECK(m.day <= 0);
    }
  }
  CHECK(seeded == 5);
}

TEST_CASE("scenario serialization round-trips") {
  const Scenario& s = support::reference_scenario();
  const Scenario again = parse_scenario(serialize_scenario(s));
  CHECK(again == s);

  const Scenario small = support::small_town();
  CHECK(parse_scenario(serialize_scenario(small)) == small);
}

TEST_CASE("scenario validation rejects inconsistent documents") {
  const std::string base = serialize_scenario(support::small_town());
  auto mutate = [&](auto fn) {
    nlohmann::json doc = nlohmann::json::parse(base);
    fn(doc);
    return doc.dump();
  };

  SUBCASE("not JSON at all") {
    CHECK_THROWS_AS(parse_scenario("{nope"), ScenarioError);
  }
  SUBCASE("duplicate agent names") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"].push_back(d["agents"][0]);
    });
    CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("duplicate agent name"),
                         ScenarioError);
  }
  SUBCASE("unknown residence") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["residence"] = "Atlantis";
    });
    CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("Atlantis"), ScenarioError);
  }
  SUBCASE("unknown workplace") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["workplace"] = "Atlantis";
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("residence kind conflict") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["residence"] = "Cafe";
    });
    CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("not a residence"),
                         ScenarioError);
  }
  SUBCASE("discount rate bounds") {
    for (double bad : {-0.1, 1.0, 1.5}) {
      const std::string text = mutate([&](nlohmann::json& d) {
        d["shops"]["Cafe"]["discounts"] = nlohmann::json::array(
            {{{"start_day", 1}, {"end_day", 1}, {"rate", bad}}});
      });
      CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("rate"), ScenarioError);
    }
  }
  SUBCASE("discount window inverted") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Cafe"]["discounts"] = nlohmann::json::array(
          {{{"start_day", 3}, {"end_day", 2}, {"rate", 0.2}}});
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("discount names a missing item") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Cafe"]["discounts"] = nlohmann::json::array(
          {{{"start_day", 1}, {"end_day", 1}, {"rate", 0.2}, {"applies_to", "lobster"}}});
    });
    CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("lobster"), ScenarioError);
  }
  SUBCASE("empty menu") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Cafe"]["menu"] = nlohmann::json::array();
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("duplicate menu items") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Cafe"]["menu"].push_back(d["shops"]["Cafe"]["menu"][0]);
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("inverted shop hours") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Cafe"]["open"] = {21, 9};
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("inverted work hours") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["work_hours"] = {17, 9};
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("deal proneness out of range") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["deal_proneness"] = 1.2;
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("seed memory in the future") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["seed_memories"] = nlohmann::json::array(
          {{{"kind", "purchase"}, {"day", 1}, {"tick", 12}, {"location", "Cafe"}}});
    });
    CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("day <= 0"), ScenarioError);
  }
  SUBCASE("relationship with unknown agent") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["relationships"]["Zed"] = 0.5;
    });
    CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("Zed"), ScenarioError);
  }
  SUBCASE("negative start money") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["agents"][0]["start_money"] = "-1.00";
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("shop at unknown location") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Ghost Stand"] = d["shops"]["Cafe"];
    });
    CHECK_THROWS_AS(parse_scenario(text), ScenarioError);
  }
  SUBCASE("error names the offending key path") {
    const std::string text = mutate([](nlohmann::json& d) {
      d["shops"]["Cafe"]["menu"][0]["price"] = "abc";
    });
    try {
      parse_scenario(text);
      FAIL("expected ScenarioError");
    } catch (const ScenarioError& e) {
      CHECK(e.key_path() == "shops.Cafe.menu[0].price");
    }
  }
}

TEST_CASE("discount stripping for baseline arms") {
  Scenario s = support::reference_scenario();
  const Scenario stripped = scenario_without_discounts(s);
  for (const auto& [name, shop] : stripped.map.shops) CHECK(shop.discounts.empty());
  // Nothing else changes.
  Scenario manual = s;
  for (auto& [name, shop] : manual.map.shops) shop.discounts.clear();
  CHECK(stripped == manual);
}

TEST_CASE("effective discount window per item") {
  const Shop& fc = *support::reference_scenario().map.shop_at("Fried Chicken Shop");
  CHECK(effective_rate(fc, "fried chicken meal", 3) == doctest::Approx(0.2));
  CHECK(effective_rate(fc, "fried chicken meal", 5) == 0.0);
  CHECK(effective_rate(fc, "some other item", 3) == 0.0);
}
