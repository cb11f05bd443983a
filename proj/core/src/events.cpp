#include "townsim/events.hpp"

#include <fstream>
#include <sstream>

namespace townsim {

using json = nlohmann::json;

namespace {

constexpr const char* kKindNames[] = {
    "travel", "purchase", "meal", "meal_skipped", "conversation",
    "social_check_skipped", "work", "rest", "sleep", "income",
    "emergency_replan", "collapse_teleport", "commitment_made",
    "commitment_fulfilled", "commitment_broken", "reflection",
    "validation_failure", "backend_fallback",
};
constexpr int kKindCount = sizeof(kKindNames) / sizeof(kKindNames[0]);

}  // namespace

std::string to_string(EventKind k) { return kKindNames[static_cast<int>(k)]; }

EventKind event_kind_from_string(const std::string& s) {
  for (int i = 0; i < kKindCount; ++i) {
    if (s == kKindNames[i]) return static_cast<EventKind>(i);
  }
  throw std::runtime_error("unknown event kind: " + s);
}

std::string event_to_line(const Event& e) {
  json j;
  j["day"] = e.day;
  j["tick"] = e.tick;
  j["seq"] = e.seq;
  j["agent"] = e.agent;
  j["kind"] = to_string(e.kind);
  j["payload"] = e.payload;
  return j.dump();  // nlohmann emits object keys sorted: byte-stable
}

Event event_from_line(const std::string& line, std::size_t line_number) {
  auto bad = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error("event log line " + std::to_string(line_number) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw bad(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw bad("expected an object");
  for (const char* key : {"day", "tick", "seq", "agent", "kind", "payload"}) {
    if (!j.contains(key)) throw bad(std::string("missing key: ") + key);
  }
  Event e;
  try {
    e.day = j["day"].get<int>();
    e.tick = j["tick"].get<int>();
    e.seq = j["seq"].get<std::uint64_t>();
    e.agent = j["agent"].get<std::string>();
    e.kind = event_kind_from_string(j["kind"].get<std::string>());
    e.payload = j["payload"];
  } catch (const std::exception& ex) {
    throw bad(ex.what());
  }
  return e;
}

std::uint64_t EventLog::append(int day, int tick, const std::string& agent,
                               EventKind kind, nlohmann::json payload) {
  std::lock_guard<std::mutex> lock(mu_);
  Event e;
  e.day = day;
  e.tick = tick;
  e.seq = next_seq_++;
  e.agent = agent;
  e.kind = kind;
  e.payload = std::move(payload);
  events_.push_back(std::move(e));
  return events_.back().seq;
}

std::vector<Event> EventLog::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_;
}

std::vector<Event> EventLog::tail(std::size_t n) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (events_.size() <= n) return events_;
  return std::vector<Event>(events_.end() - n, events_.end());
}

std::size_t EventLog::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_.size();
}

std::string events_to_jsonl(const std::vector<Event>& events) {
  std::string out;
  for (const Event& e : events) {
    out += event_to_line(e);
    out += '\n';
  }
  return out;
}

void write_events_jsonl(const std::vector<Event>& events, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << events_to_jsonl(events);
}

std::vector<Event> parse_events_jsonl(const std::string& text) {
  std::vector<Event> events;
  std::istringstream in(text);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    events.push_back(event_from_line(line, line_number));
  }
  return events;
}

std::vector<Event> read_events_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_events_jsonl(buf.str());
}

}  // namespace townsim
