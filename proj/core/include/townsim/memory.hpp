#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "townsim/world.hpp"

namespace townsim {

// ---------------------------------------------------------------------------
// Memory entries and retrieval
// ---------------------------------------------------------------------------

enum class MemoryKind { event, reflection, conversation, purchase };

std::string to_string(MemoryKind k);
MemoryKind memory_kind_from_string(const std::string& s);

struct MemoryEntry {
  std::uint64_t id = 0;  // assigned by the stream; strictly increasing
  SimTime at;
  MemoryKind kind = MemoryKind::event;
  std::string source_agent;                // whose action produced the entry
  std::vector<std::string> participants;   // other agents involved, if any
  std::string content;
  std::map<std::string, std::string> structured;  // e.g. {"location": "..."}
  bool operator==(const MemoryEntry&) const = default;
};

struct RetrievalQuery {
  SimTime now;
  std::vector<std::string> topic_participants;  // boost entries about them
  int max_n = 10;
};

// Time decay of the retrieval score: 2^(-age_ticks / half_life). Exactly 0.5
// at age == half_life.
double decay_factor(long long age_ticks, int half_life_ticks);

// Relationship proximity of an entry from `owner`'s point of view: 1.0 for
// entries that involve nobody else, otherwise the best relationship score
// among the other agents involved; agents named in topic_participants count
// as 1.0 while they are the topic.
double entry_proximity(const MemoryEntry& e, const std::string& owner,
                       const std::vector<std::string>& topic_participants,
                       const std::map<std::string, double>& relationships);

// score = w_time * decay(age) + w_rel * proximity
double retrieval_score(const MemoryEntry& e, const std::string& owner,
                       const RetrievalQuery& q, const MemoryConfig& cfg,
                       int ticks_per_day,
                       const std::map<std::string, double>& relationships);

// Append-only per-agent stream. Nothing ever mutates or deletes past entries.
class MemoryStream {
 public:
  explicit MemoryStream(std::string owner = "") : owner_(std::move(owner)) {}

  const std::string& owner() const { return owner_; }

  // Appends and assigns the next id. Throws std::invalid_argument if the
  // timestamp is in the future relative to `now`.
  const MemoryEntry& ingest(MemoryEntry entry, SimTime now, int ticks_per_day);

  // Top max_n entries by score, descending; ties broken by recency (newer
  // first) then id (higher first). Entries older than the hard horizon (when
  // configured) are excluded.
  std::vector<MemoryEntry> retrieve(const RetrievalQuery& q, const MemoryConfig& cfg,
                                    int ticks_per_day,
                                    const std::map<std::string, double>& relationships) const;

  // Purchases at `location` within the last window_ticks (inclusive).
  int count_recent_purchases(const std::string& location, SimTime now,
                             long long window_ticks, int ticks_per_day) const;

  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::string owner_;
  std::vector<MemoryEntry> entries_;
  std::uint64_t next_id_ = 1;
};

// ---------------------------------------------------------------------------
// Commitments
// ---------------------------------------------------------------------------

enum class CommitmentStatus { pending, fulfilled, broken, rescheduled };

std::string to_string(CommitmentStatus s);

// Transitions are one-way (pending -> fulfilled | broken) except the
// reschedule loop pending -> rescheduled -> pending.
bool commitment_transition_allowed(CommitmentStatus from, CommitmentStatus to);

struct Commitment {
  std::uint64_t id = 0;
  std::vector<std::string> parties;  // sorted, unique
  std::string action;                // free text, e.g. "breakfast together"
  std::string location;
  SimTime scheduled;
  SimTime created;
  CommitmentStatus status = CommitmentStatus::pending;
  bool operator==(const Commitment&) const = default;
};

// ---------------------------------------------------------------------------
// Conversations
// ---------------------------------------------------------------------------

struct ConversationLine {
  std::string speaker;
  std::string text;
  bool operator==(const ConversationLine&) const = default;
};

// Machine-readable intent attached to a transcript by the backend. Only kind
// "commitment" is extracted today; other kinds are ignored.
struct StructuredIntent {
  std::string kind;
  std::vector<std::string> parties;
  std::string location;
  SimTime scheduled;
  std::string action;
  bool operator==(const StructuredIntent&) const = default;
};

struct ConversationTranscript {
  std::vector<std::string> participants;
  std::vector<ConversationLine> lines;
  std::vector<StructuredIntent> intents;
  bool operator==(const ConversationTranscript&) const = default;
};

struct RejectedIntent {
  StructuredIntent intent;
  std::string reason;  // e.g. "unknown location: ..."
};

struct CommitmentExtraction {
  std::vector<Commitment> commitments;
  std::vector<RejectedIntent> rejected;
};

// Turns commitment intents into Commitment records (ids left 0 for the caller
// to assign). Grounding: intents naming locations outside the map or parties
// outside the transcript participants are rejected, not dropped silently.
// One commitment per accepting respondent: each intent already names its
// parties, so a multi-invitation produces one intent per accepted pair.
CommitmentExtraction extract_commitments(const ConversationTranscript& t,
                                         const TownMap& map, SimTime now);

}  // namespace townsim
