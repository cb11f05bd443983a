// Process-level contract tests for the townsim binary: subcommands, flag
// precedence, exit codes, report trees, and the compare/replay workflows.
#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the real binary with a scrubbed environment (the three TOWNSIM_LLM_*
// variables are always cleared first so tests control them explicitly).
CliResult cli(const std::string& args, const std::string& env_assignments = "") {
  static std::atomic<int> counter{0};
  const fs::path dir = support::fresh_dir("cli-io-" + std::to_string(counter.fetch_add(1)));
  const fs::path out_file = dir / "stdout.txt";
  const fs::path err_file = dir / "stderr.txt";

  std::string cmd = "env -u TOWNSIM_LLM_ENDPOINT -u TOWNSIM_LLM_API_KEY -u TOWNSIM_LLM_MODEL ";
  if (!env_assignments.empty()) cmd += env_assignments + " ";
  cmd += "\"" TOWNSIM_BINARY "\" " + args + " >\"" + out_file.string() + "\" 2>\"" +
         err_file.string() + "\"";

  const int status = std::system(cmd.c_str());
  CliResult r;
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = support::slurp(out_file);
  r.err = support::slurp(err_file);
  return r;
}

std::string reference_path() {
  return (fs::path(TOWNSIM_SCENARIO_DIR) / "reference.json").string();
}

json read_summary(const fs::path& dir) {
  return json::parse(support::slurp(dir / "summary.json"));
}

const std::vector<std::string> kRunReports = {
    "events.jsonl", "daily_sales.csv", "market_share.csv", "choice_matrix.csv",
    "summary.json"};

}  // namespace

TEST_CASE("cli: deterministic reruns write byte-identical output trees") {
  const fs::path a = support::fresh_dir("cli-rerun-a");
  const fs::path b = support::fresh_dir("cli-rerun-b");
  const std::string base = "run --scenario \"" + reference_path() +
                           "\" --backend oracle --mode deterministic --seed 42 --out ";

  const CliResult ra = cli(base + "\"" + a.string() + "\"");
  REQUIRE(ra.code == 0);
  const CliResult rb = cli(base + "\"" + b.string() + "\"");
  REQUIRE(rb.code == 0);

  for (const std::string& name : kRunReports) {
    CAPTURE(name);
    REQUIRE(fs::exists(a / name));
    CHECK(support::slurp(a / name) == support::slurp(b / name));
  }
  CHECK(fs::file_size(a / "events.jsonl") > 0);
}

TEST_CASE("cli: a zero-day run writes an empty log and header-only reports") {
  const fs::path out = support::fresh_dir("cli-zero-days");
  const CliResult r =
      cli("run --scenario \"" + reference_path() + "\" --days 0 --out \"" + out.string() + "\"");
  CHECK(r.code == 0);

  for (const std::string& name : kRunReports) {
    CAPTURE(name);
    CHECK(fs::exists(out / name));
  }
  CHECK(fs::file_size(out / "events.jsonl") == 0);
  CHECK(support::slurp(out / "daily_sales.csv") == "day,shop,kind,revenue,transactions\n");

  const json summary = read_summary(out);
  CHECK(summary.at("days") == 0);
  CHECK(summary.at("event_count") == 0);
}

TEST_CASE("cli: flag overrides beat scenario values and are reflected in the summary") {
  const fs::path out = support::fresh_dir("cli-overrides");
  const CliResult r = cli("run --scenario \"" + reference_path() +
                          "\" --seed 7 --days 2 --mode parallel --out \"" + out.string() + "\"");
  REQUIRE(r.code == 0);

  const json summary = read_summary(out);
  CHECK(summary.at("seed") == 7);
  CHECK(summary.at("days") == 2);
  CHECK(summary.at("mode") == "parallel");
  CHECK(summary.at("backend") == "oracle");

  // Without flags the scenario's own values drive the run.
  const fs::path plain = support::fresh_dir("cli-plain");
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --out \"" + plain.string() + "\"")
              .code == 0);
  const json defaults = read_summary(plain);
  CHECK(defaults.at("seed") == 42);
  CHECK(defaults.at("days") == 7);
  CHECK(defaults.at("mode") == "deterministic");
}

TEST_CASE("cli: --no-discounts strips every discount window") {
  const fs::path treated = support::fresh_dir("cli-promo");
  const fs::path baseline = support::fresh_dir("cli-baseline");
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --out \"" + treated.string() + "\"")
              .code == 0);
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --no-discounts --out \"" +
              baseline.string() + "\"")
              .code == 0);

  const json promo = read_summary(treated).at("discount_days");
  const json none = read_summary(baseline).at("discount_days");
  CHECK(promo.size() == 1);
  CHECK(promo.contains("Fried Chicken Shop"));
  CHECK(none.empty());
}

TEST_CASE("cli: remote backend without an endpoint fails fast naming the variable") {
  const fs::path out = support::fresh_dir("cli-no-endpoint");
  const CliResult r = cli("run --scenario \"" + reference_path() +
                          "\" --backend remote --out \"" + out.string() + "\"");
  CHECK(r.code == 3);
  CHECK(r.err.find("TOWNSIM_LLM_ENDPOINT") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "events.jsonl"));
}

TEST_CASE("cli: a dead remote endpoint aborts the run and flushes the partial log") {
  const fs::path out = support::fresh_dir("cli-dead-endpoint");
  // Port 1 is reserved; every connection is refused immediately.
  const CliResult r = cli("run --scenario \"" + reference_path() + "\" --backend remote --out \"" +
                              out.string() + "\"",
                          "TOWNSIM_LLM_ENDPOINT=http://127.0.0.1:1");
  CHECK(r.code == 3);
  CHECK(r.err.find("backend failure") != std::string::npos);
  CHECK(fs::exists(out / "events.jsonl"));
}

TEST_CASE("cli: remote runs against a live endpoint write a transcript") {
  httplib::Server server;
  server.Post(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    json body;
    body["choices"] = json::array(
        {{{"message", {{"role", "assistant"},
                       {"content", R"({"time": 12, "action": "rest"})"}}}}});
    res.set_content(body.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&server] { server.listen_after_bind(); });
  server.wait_until_ready();

  const fs::path out = support::fresh_dir("cli-live-remote");
  const CliResult r = cli("run --scenario \"" + reference_path() + "\" --backend remote --days 1 " +
                              "--out \"" + out.string() + "\"",
                          "TOWNSIM_LLM_ENDPOINT=http://127.0.0.1:" + std::to_string(port));
  server.stop();
  listener.join();

  CHECK(r.code == 0);
  CHECK(read_summary(out).at("backend") == "remote");
  REQUIRE(fs::exists(out / "transcripts.jsonl"));
  std::ifstream in(out / "transcripts.jsonl");
  std::string first_line;
  REQUIRE(std::getline(in, first_line));
  const json rec = json::parse(first_line);
  CHECK(rec.contains("agent"));
  CHECK(rec.contains("prompt"));
  CHECK(rec.at("response") == R"({"time": 12, "action": "rest"})");
}

TEST_CASE("cli: validate lints scenario files") {
  SUBCASE("the reference scenario is accepted") {
    const CliResult r = cli("validate --scenario \"" + reference_path() + "\"");
    CHECK(r.code == 0);
    CHECK(r.out.find("scenario OK") != std::string::npos);
    CHECK(r.out.find("11 agents") != std::string::npos);
  }

  SUBCASE("unparseable json is rejected") {
    const fs::path dir = support::fresh_dir("cli-bad-json");
    std::ofstream(dir / "broken.json") << "{ not json";
    const CliResult r = cli("validate --scenario \"" + (dir / "broken.json").string() + "\"");
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
  }

  SUBCASE("a structurally invalid scenario is rejected with the offending path") {
    const fs::path dir = support::fresh_dir("cli-bad-scenario");
    json doc = json::parse(support::slurp(reference_path()));
    doc["agents"][0]["residence"] = "Atlantis Towers";
    std::ofstream(dir / "bad.json") << doc.dump(2);
    const CliResult r = cli("validate --scenario \"" + (dir / "bad.json").string() + "\"");
    CHECK(r.code == 2);
    CHECK(r.err.find("scenario invalid") != std::string::npos);
  }

  SUBCASE("a missing file is rejected") {
    const CliResult r = cli("validate --scenario /definitely/not/here.json");
    CHECK(r.code == 2);
  }
}

TEST_CASE("cli: compare of a run with itself reports zero deltas and no dominance") {
  const fs::path run_dir = support::fresh_dir("cli-self-run");
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --out \"" + run_dir.string() + "\"")
              .code == 0);

  const fs::path cmp = support::fresh_dir("cli-self-cmp");
  const CliResult r = cli("compare --baseline \"" + run_dir.string() + "\" --treated \"" +
                          run_dir.string() + "\" --out \"" + cmp.string() + "\"");
  CHECK(r.code == 0);
  CHECK(r.out.find("focus shop: Fried Chicken Shop") != std::string::npos);
  CHECK(r.out.find("substitution dominant: no") != std::string::npos);

  REQUIRE(fs::exists(cmp / "substitution_report.csv"));
  const json report = json::parse(support::slurp(cmp / "substitution_report.json"));
  CHECK(report.at("relative_total_change") == 0.0);
  CHECK(report.at("substitution_dominant") == false);
  for (const auto& [shop, rows] : report.at("shops").items()) {
    CAPTURE(shop);
    for (const json& row : rows) {
      CHECK(row.at("delta").get<double>() == 0.0);
    }
  }
}

TEST_CASE("cli: compare rejects runs with different day counts") {
  const fs::path d2 = support::fresh_dir("cli-days2");
  const fs::path d3 = support::fresh_dir("cli-days3");
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --days 2 --out \"" + d2.string() +
              "\"")
              .code == 0);
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --days 3 --out \"" + d3.string() +
              "\"")
              .code == 0);

  const fs::path cmp = support::fresh_dir("cli-days-cmp");
  const CliResult r = cli("compare --baseline \"" + d2.string() + "\" --treated \"" + d3.string() +
                          "\" --out \"" + cmp.string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("day counts differ") != std::string::npos);
}

TEST_CASE("cli: compare needs a readable pair of run directories") {
  const fs::path empty = support::fresh_dir("cli-empty-dir");
  const CliResult r = cli("compare --baseline \"" + empty.string() + "\" --treated \"" +
                          empty.string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot read run directory") != std::string::npos);
}

TEST_CASE("cli: replay rebuilds identical analytics from a saved event log") {
  const fs::path run_dir = support::fresh_dir("cli-replay-src");
  REQUIRE(cli("run --scenario \"" + reference_path() + "\" --out \"" + run_dir.string() + "\"")
              .code == 0);

  const fs::path replay_dir = support::fresh_dir("cli-replay-dst");
  const CliResult r = cli("replay --log \"" + (run_dir / "events.jsonl").string() +
                          "\" --out \"" + replay_dir.string() + "\"");
  CHECK(r.code == 0);

  for (const std::string name : {"daily_sales.csv", "market_share.csv", "choice_matrix.csv"}) {
    CAPTURE(name);
    CHECK(support::slurp(run_dir / name) == support::slurp(replay_dir / name));
  }

  const CliResult missing = cli("replay --log /definitely/not/here.jsonl");
  CHECK(missing.code == 1);
  CHECK(missing.err.find("cannot read event log") != std::string::npos);
}

TEST_CASE("cli: usage errors exit with code 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("run").code == 1);  // --scenario is required
  CHECK(cli("run --scenario x.json --backend carrier-pigeon").code == 1);
  CHECK(cli("run --scenario x.json --days -3").code == 1);
  CHECK(cli("compare --baseline only").code == 1);  // --treated is required

  const CliResult version = cli("--version");
  CHECK(version.code == 0);
  CHECK(version.out.find("townsim") != std::string::npos);
}
