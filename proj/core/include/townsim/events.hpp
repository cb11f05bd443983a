#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "townsim/world.hpp"

namespace townsim {

enum class EventKind {
  travel,
  purchase,
  meal,
  meal_skipped,
  conversation,
  social_check_skipped,
  work,
  rest,
  sleep,
  income,
  emergency_replan,
  collapse_teleport,
  commitment_made,
  commitment_fulfilled,
  commitment_broken,
  reflection,
  validation_failure,
  backend_fallback,
};

std::string to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

// One structured record. `seq` is the log's total order; within deterministic
// runs it is reproducible bit-for-bit, in parallel runs only per-tick
// interleaving may vary.
struct Event {
  int day = 1;
  int tick = 0;
  std::uint64_t seq = 0;
  std::string agent;
  EventKind kind = EventKind::rest;
  nlohmann::json payload;
  bool operator==(const Event&) const = default;
};

std::string event_to_line(const Event& e);      // single JSONL line, no newline
Event event_from_line(const std::string& line, std::size_t line_number);

// Serialized sink: appends from any thread get a unique, gap-free seq.
class EventLog {
 public:
  std::uint64_t append(int day, int tick, const std::string& agent, EventKind kind,
                       nlohmann::json payload);

  const std::vector<Event>& events() const { return events_; }  // post-run only
  std::vector<Event> snapshot() const;                          // thread-safe copy
  std::vector<Event> tail(std::size_t n) const;                 // last n, thread-safe
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
  std::uint64_t next_seq_ = 0;
};

void write_events_jsonl(const std::vector<Event>& events, const std::filesystem::path& file);
std::string events_to_jsonl(const std::vector<Event>& events);

// Throws std::runtime_error naming the 1-based line number on malformed input.
std::vector<Event> read_events_jsonl(const std::filesystem::path& file);
std::vector<Event> parse_events_jsonl(const std::string& text);

}  // namespace townsim
