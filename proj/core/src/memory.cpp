#include "townsim/memory.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace townsim {

std::string to_string(MemoryKind k) {
  switch (k) {
    case MemoryKind::event: return "event";
    case MemoryKind::reflection: return "reflection";
    case MemoryKind::conversation: return "conversation";
    case MemoryKind::purchase: return "purchase";
  }
  return "event";
}

MemoryKind memory_kind_from_string(const std::string& s) {
  if (s == "event") return MemoryKind::event;
  if (s == "reflection") return MemoryKind::reflection;
  if (s == "conversation") return MemoryKind::conversation;
  if (s == "purchase") return MemoryKind::purchase;
  throw std::invalid_argument("unknown memory kind: " + s);
}

double decay_factor(long long age_ticks, int half_life_ticks) {
  if (age_ticks <= 0) return 1.0;
  return std::exp2(-static_cast<double>(age_ticks) / half_life_ticks);
}

double entry_proximity(const MemoryEntry& e, const std::string& owner,
                       const std::vector<std::string>& topic_participants,
                       const std::map<std::string, double>& relationships) {
  double best = -1.0;
  auto consider = [&](const std::string& who) {
    if (who.empty() || who == owner) return;
    double p = 0.0;
    if (std::find(topic_participants.begin(), topic_participants.end(), who) !=
        topic_participants.end()) {
      p = 1.0;
    } else if (auto it = relationships.find(who); it != relationships.end()) {
      p = it->second;
    }
    best = std::max(best, p);
  };
  consider(e.source_agent);
  for (const std::string& who : e.participants) consider(who);
  return best < 0.0 ? 1.0 : best;  // nobody else involved: a first-person memory
}

double retrieval_score(const MemoryEntry& e, const std::string& owner,
                       const RetrievalQuery& q, const MemoryConfig& cfg,
                       int ticks_per_day,
                       const std::map<std::string, double>& relationships) {
  const long long age = to_ticks(q.now, ticks_per_day) - to_ticks(e.at, ticks_per_day);
  return cfg.w_time * decay_factor(age, cfg.half_life_ticks) +
         cfg.w_rel * entry_proximity(e, owner, q.topic_participants, relationships);
}

const MemoryEntry& MemoryStream::ingest(MemoryEntry entry, SimTime now, int ticks_per_day) {
  if (to_ticks(entry.at, ticks_per_day) > to_ticks(now, ticks_per_day)) {
    throw std::invalid_argument("memory timestamp is in the future");
  }
  entry.id = next_id_++;
  if (entry.source_agent.empty()) entry.source_agent = owner_;
  entries_.push_back(std::move(entry));
  return entries_.back();
}

std::vector<MemoryEntry> MemoryStream::retrieve(
    const RetrievalQuery& q, const MemoryConfig& cfg, int ticks_per_day,
    const std::map<std::string, double>& relationships) const {
  struct Scored {
    double score;
    const MemoryEntry* e;
  };
  std::vector<Scored> scored;
  scored.reserve(entries_.size());
  const long long now_ticks = to_ticks(q.now, ticks_per_day);
  for (const MemoryEntry& e : entries_) {
    const long long age = now_ticks - to_ticks(e.at, ticks_per_day);
    if (cfg.hard_horizon_ticks > 0 && age > cfg.hard_horizon_ticks) continue;
    scored.push_back({retrieval_score(e, owner_, q, cfg, ticks_per_day, relationships), &e});
  }
  auto newer = [ticks_per_day](const MemoryEntry* a, const MemoryEntry* b) {
    const long long ta = to_ticks(a->at, ticks_per_day);
    const long long tb = to_ticks(b->at, ticks_per_day);
    if (ta != tb) return ta > tb;
    return a->id > b->id;
  };
  std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return newer(a.e, b.e);
  });
  const std::size_t n = std::min<std::size_t>(scored.size(), q.max_n < 0 ? 0 : q.max_n);
  std::vector<MemoryEntry> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(*scored[i].e);
  return out;
}

int MemoryStream::count_recent_purchases(const std::string& location, SimTime now,
                                         long long window_ticks, int ticks_per_day) const {
  const long long now_ticks = to_ticks(now, ticks_per_day);
  int count = 0;
  for (const MemoryEntry& e : entries_) {
    if (e.kind != MemoryKind::purchase) continue;
    auto it = e.structured.find("location");
    if (it == e.structured.end() || it->second != location) continue;
    const long long age = now_ticks - to_ticks(e.at, ticks_per_day);
    if (age >= 0 && age <= window_ticks) ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Commitments
// ---------------------------------------------------------------------------

std::string to_string(CommitmentStatus s) {
  switch (s) {
    case CommitmentStatus::pending: return "pending";
    case CommitmentStatus::fulfilled: return "fulfilled";
    case CommitmentStatus::broken: return "broken";
    case CommitmentStatus::rescheduled: return "rescheduled";
  }
  return "pending";
}

bool commitment_transition_allowed(CommitmentStatus from, CommitmentStatus to) {
  if (from == to) return false;
  switch (from) {
    case CommitmentStatus::pending:
      return to == CommitmentStatus::fulfilled || to == CommitmentStatus::broken ||
             to == CommitmentStatus::rescheduled;
    case CommitmentStatus::rescheduled:
      return to == CommitmentStatus::pending;
    case CommitmentStatus::fulfilled:
    case CommitmentStatus::broken:
      return false;
  }
  return false;
}

CommitmentExtraction extract_commitments(const ConversationTranscript& t,
                                         const TownMap& map, SimTime now) {
  CommitmentExtraction out;
  std::set<std::string> participants(t.participants.begin(), t.participants.end());
  for (const StructuredIntent& intent : t.intents) {
    if (intent.kind != "commitment") continue;
    if (intent.parties.size() < 2) {
      out.rejected.push_back({intent, "a commitment needs at least two parties"});
      continue;
    }
    bool parties_ok = true;
    for (const std::string& who : intent.parties) {
      if (!participants.count(who)) {
        out.rejected.push_back({intent, "party not in conversation: " + who});
        parties_ok = false;
        break;
      }
    }
    if (!parties_ok) continue;
    if (!map.has(intent.location)) {
      out.rejected.push_back({intent, "unknown location: " + intent.location});
      continue;
    }
    if (intent.scheduled < now) {
      out.rejected.push_back({intent, "scheduled time is in the past"});
      continue;
    }
    Commitment c;
    c.parties = intent.parties;
    std::sort(c.parties.begin(), c.parties.end());
    c.parties.erase(std::unique(c.parties.begin(), c.parties.end()), c.parties.end());
    c.action = intent.action;
    c.location = intent.location;
    c.scheduled = intent.scheduled;
    c.created = now;
    c.status = CommitmentStatus::pending;
    out.commitments.push_back(std::move(c));
  }
  return out;
}

}  // namespace townsim
