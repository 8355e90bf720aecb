#include "loghive/reputation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "loghive/error.hpp"

namespace loghive {
namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t shingle_hash(std::string_view s) {
  std::uint64_t v = s.size();
  for (unsigned char c : s) v = (v << 8) | c;
  return mix64(v);
}

}  // namespace

std::uint64_t content_fingerprint(std::string_view message) {
  if (message.empty()) return 0;
  constexpr std::size_t k = 4;
  std::array<int, 64> votes{};
  auto vote = [&](std::uint64_t h) {
    for (int b = 0; b < 64; ++b) votes[b] += ((h >> b) & 1U) != 0 ? 1 : -1;
  };
  if (message.size() < k) {
    vote(shingle_hash(message));
  } else {
    for (std::size_t i = 0; i + k <= message.size(); ++i) vote(shingle_hash(message.substr(i, k)));
  }
  std::uint64_t out = 0;
  for (int b = 0; b < 64; ++b) {
    if (votes[b] > 0) out |= 1ULL << b;
  }
  return out;
}

PeerEvent reduce_event(const LogRecord& record) {
  const bool flagged = record.flags.any_of(Flags{Flag::spam, Flag::malware, Flag::virus});
  return {record.message.size(), flagged, content_fingerprint(record.message)};
}

PeerProfile::PeerProfile(std::string peer_id, std::size_t window)
    : peer_id_(std::move(peer_id)), capacity_(window == 0 ? 1 : window) {}

void PeerProfile::push(const PeerEvent& event) {
  if (window_.size() == capacity_) {
    if (window_.front().flagged) --flagged_;
    window_.pop_front();
  }
  window_.push_back(event);
  if (event.flagged) ++flagged_;
  ++total_;
}

void update_profile(PeerProfile& profile, const LogRecord& record, Category category) {
  if (category != Category::security) {
    throw Error(ErrorCode::CategoryMismatch, "reputation only tracks security events");
  }
  if (!record.peer_id || *record.peer_id != profile.peer_id()) {
    throw Error(ErrorCode::CategoryMismatch, "event peer does not match profile " + profile.peer_id());
  }
  profile.push(reduce_event(record));
}

double near_duplicate_fraction(const std::deque<PeerEvent>& window) {
  if (window.empty()) return 0.0;
  const std::size_t n = window.size();
  std::vector<bool> close(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (hamming_distance(window[i].fingerprint, window[j].fingerprint) <= kNearDuplicateDistance) {
        close[i] = true;
        close[j] = true;
      }
    }
  }
  return static_cast<double>(std::count(close.begin(), close.end(), true)) / static_cast<double>(n);
}

Features features(const PeerProfile& profile, std::uint64_t fleet_median_size) {
  const auto& w = profile.window();
  if (w.empty()) throw Error(ErrorCode::EmptyWindow, "no events for peer " + profile.peer_id());
  const double n = static_cast<double>(w.size());
  // Bounds as exact integer comparisons: size*4 < median, size > 4*median.
  const auto outlier = std::count_if(w.begin(), w.end(), [&](const PeerEvent& e) {
    return e.size * 4 < fleet_median_size || e.size > 4 * fleet_median_size;
  });
  return {static_cast<double>(profile.flagged_count()) / n, static_cast<double>(outlier) / n,
          near_duplicate_fraction(w)};
}

void validate(const Weights& weights) {
  const bool ok = weights.spam >= 0.0 && weights.size >= 0.0 && weights.sim >= 0.0 &&
                  weights.spam + weights.size + weights.sim <= 1.0 + 1e-12;
  if (!ok) throw Error(ErrorCode::BadWeights, "weights must be non-negative and sum to at most 1");
}

int score(const Features& f, const Weights& weights) {
  validate(weights);
  const double penalty = weights.spam * f.spam + weights.size * f.size + weights.sim * f.sim;
  return std::max(1, static_cast<int>(std::lround(10.0 * (1.0 - penalty))));
}

std::string format_score_line(const ReputationScore& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " %d %.3f %.3f %.3f", s.score, s.features.spam, s.features.size,
                s.features.sim);
  return s.peer_id + buf;
}

ReputationEngine::ReputationEngine(Weights weights, std::size_t window) : weights_(weights), window_(window) {
  validate(weights_);
}

void ReputationEngine::observe(const LogRecord& record, Category category) {
  if (category != Category::security || !record.peer_id) return;
  std::lock_guard lock(mu_);
  auto it = profiles_.find(*record.peer_id);
  if (it == profiles_.end()) it = profiles_.emplace(*record.peer_id, PeerProfile(*record.peer_id, window_)).first;
  update_profile(it->second, record, category);
}

std::uint64_t ReputationEngine::fleet_median_locked() const {
  std::vector<std::uint64_t> sizes;
  for (const auto& [_, p] : profiles_) {
    for (const auto& e : p.window()) sizes.push_back(e.size);
  }
  if (sizes.empty()) return 0;
  const auto mid = sizes.begin() + static_cast<std::ptrdiff_t>((sizes.size() - 1) / 2);
  std::nth_element(sizes.begin(), mid, sizes.end());
  return *mid;
}

std::uint64_t ReputationEngine::fleet_median_size() const {
  std::lock_guard lock(mu_);
  return fleet_median_locked();
}

std::vector<ReputationScore> ReputationEngine::report(Timestamp now) const {
  std::lock_guard lock(mu_);
  // A median of 0 (all messages empty) would make every event an outlier;
  // 1 keeps the band meaningful.
  const auto median = std::max<std::uint64_t>(1, fleet_median_locked());
  std::vector<ReputationScore> out;
  out.reserve(profiles_.size());
  for (const auto& [peer, p] : profiles_) {
    ReputationScore s{peer, 10, {}, now};
    if (!p.window().empty()) {
      s.features = features(p, median);
      s.score = score(s.features, weights_);
    }
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const ReputationScore& a, const ReputationScore& b) {
    return a.score != b.score ? a.score < b.score : a.peer_id < b.peer_id;
  });
  return out;
}

std::size_t ReputationEngine::peer_count() const {
  std::lock_guard lock(mu_);
  return profiles_.size();
}

}  // namespace loghive
