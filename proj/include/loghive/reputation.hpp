#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "loghive/record.hpp"

namespace loghive {

inline constexpr std::size_t kDefaultReputationWindow = 256;
inline constexpr int kNearDuplicateDistance = 3;

/// 64-bit simhash of the message over overlapping 4-byte shingles. Messages
/// shorter than four bytes form a single shingle; the empty message maps to 0.
std::uint64_t content_fingerprint(std::string_view message);

inline int hamming_distance(std::uint64_t a, std::uint64_t b) { return __builtin_popcountll(a ^ b); }

struct PeerEvent {
  std::uint64_t size = 0;
  bool flagged = false;
  std::uint64_t fingerprint = 0;
  friend bool operator==(const PeerEvent&, const PeerEvent&) = default;
};

PeerEvent reduce_event(const LogRecord& record);

class PeerProfile {
 public:
  explicit PeerProfile(std::string peer_id, std::size_t window = kDefaultReputationWindow);

  const std::string& peer_id() const { return peer_id_; }
  std::size_t capacity() const { return capacity_; }
  const std::deque<PeerEvent>& window() const { return window_; }
  std::size_t flagged_count() const { return flagged_; }
  std::uint64_t total_events() const { return total_; }

  void push(const PeerEvent& event);

 private:
  std::string peer_id_;
  std::size_t capacity_;
  std::deque<PeerEvent> window_;
  std::size_t flagged_ = 0;
  std::uint64_t total_ = 0;
};

/// Throws CategoryMismatch unless `category` is security and the record's
/// peer equals the profile's.
void update_profile(PeerProfile& profile, const LogRecord& record, Category category);

struct Features {
  double spam = 0.0;
  double size = 0.0;
  double sim = 0.0;
  friend bool operator==(const Features&, const Features&) = default;
};

/// Throws EmptyWindow for an empty profile; fleet_median_size must be > 0.
Features features(const PeerProfile& profile, std::uint64_t fleet_median_size);

/// Fraction of events within kNearDuplicateDistance of at least one other.
double near_duplicate_fraction(const std::deque<PeerEvent>& window);

struct Weights {
  double spam = 0.5;
  double size = 0.2;
  double sim = 0.3;
};

/// Throws BadWeights unless every weight is >= 0 and their sum <= 1.
void validate(const Weights& weights);

/// max(1, round(10 * (1 - penalty))).
int score(const Features& f, const Weights& weights = {});

struct ReputationScore {
  std::string peer_id;
  int score = 10;
  Features features;
  Timestamp computed_at{};
};

/// `<peer> <score> <f_spam> <f_size> <f_sim>` with three decimals.
std::string format_score_line(const ReputationScore& s);

/// Owns every peer profile of one device. Thread-safe.
class ReputationEngine {
 public:
  explicit ReputationEngine(Weights weights = {}, std::size_t window = kDefaultReputationWindow);

  /// Records without a peer, or outside the security category, are ignored.
  void observe(const LogRecord& record, Category category);

  /// Lower median of every event size across all windows; 0 with no events.
  std::uint64_t fleet_median_size() const;

  /// Worst score first, ties by peer id.
  std::vector<ReputationScore> report(Timestamp now) const;

  std::size_t peer_count() const;

 private:
  std::uint64_t fleet_median_locked() const;

  Weights weights_;
  std::size_t window_;
  mutable std::mutex mu_;
  std::map<std::string, PeerProfile, std::less<>> profiles_;
};

}  // namespace loghive
