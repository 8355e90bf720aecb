#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loghive/archiver.hpp"
#include "loghive/clock.hpp"
#include "loghive/crypto.hpp"
#include "loghive/fault.hpp"
#include "loghive/record.hpp"

namespace loghive {

inline constexpr std::uint64_t kDefaultSegmentTarget = 64 * 1024;
inline constexpr double kDefaultThreshold = 0.8;
inline constexpr double kDefaultBand = 0.05;
inline constexpr double kDonorCapFraction = 0.10;

enum class RetentionPolicy { archive_then_delete, delete_only };

std::string_view to_string(RetentionPolicy p);
std::optional<RetentionPolicy> parse_retention_policy(std::string_view text);

enum class ThresholdState { below, at, above };

std::string_view to_string(ThresholdState s);
/// `B`, `A`, or `O` (abOve).
char status_letter(ThresholdState s);

/// Below iff u < T-band, Above iff u > T+band, At otherwise.
ThresholdState derive_threshold_state(std::uint64_t used, std::uint64_t quota, double threshold, double band);

struct PartitionConfig {
  Category category = Category::general_info;
  std::uint64_t quota_bytes = 0;
  double threshold = kDefaultThreshold;
  double band = kDefaultBand;
  RetentionPolicy policy = RetentionPolicy::delete_only;
  bool daily_rotation = false;
};

using PartitionConfigs = std::array<PartitionConfig, kCategoryCount>;
using QuotaMap = std::array<std::uint64_t, kCategoryCount>;

/// Default split of the budget: security 30%, general_info 10%, the other
/// four 15% each. Rounding remainder goes to security. general_info gets
/// daily rotation.
PartitionConfigs default_partition_configs(std::uint64_t budget);

/// Smallest legal quota: one full segment plus its header and tag.
constexpr std::uint64_t min_partition_quota(std::uint64_t segment_target) {
  return segment_target + kSegmentOverheadBytes;
}

/// Throws Error(ConfigInvalid) describing the first violated invariant.
void validate_partition_configs(std::uint64_t budget, const PartitionConfigs& configs, std::uint64_t segment_target);

struct PartitionUsage {
  Category category = Category::general_info;
  std::uint64_t quota_bytes = 0;
  std::uint64_t used_bytes = 0;
  double threshold = kDefaultThreshold;
  double band = kDefaultBand;
  std::uint64_t min_quota = 0;

  double fraction() const { return quota_bytes == 0 ? 0.0 : static_cast<double>(used_bytes) / quota_bytes; }
  ThresholdState state() const { return derive_threshold_state(used_bytes, quota_bytes, threshold, band); }
};

/// One rebalance round. Receivers are Above partitions, in partition order;
/// each asks for the smallest quota that puts it At. Donors are Below
/// partitions with u < T-2*band; each gives at most 10% of its quota and only
/// as much as keeps it under T-2*band and at or above its minimum quota. The
/// budget is conserved exactly; without receivers or donors nothing moves.
QuotaMap plan_rebalance(std::span<const PartitionUsage, kCategoryCount> partitions);

struct SegmentInfo {
  SegmentId id;
  std::uint64_t size = 0;
  std::uint64_t first_seq = 0;
  std::uint64_t last_seq = 0;
  Timestamp created_at{};
};

struct ThresholdEvent {
  Category partition = Category::security;
  ThresholdState from = ThresholdState::below;
  ThresholdState to = ThresholdState::below;
  Timestamp at{};
  std::uint64_t used_bytes = 0;
  std::uint64_t quota_bytes = 0;

  double fraction() const { return quota_bytes == 0 ? 0.0 : static_cast<double>(used_bytes) / quota_bytes; }
};

/// Bounded event queue for one consumer. When full the oldest event is
/// dropped and counted, so a slow reader never blocks the publisher.
class EventSubscription {
 public:
  explicit EventSubscription(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  void push(const ThresholdEvent& event);
  std::vector<ThresholdEvent> drain();
  std::uint64_t dropped() const;

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::deque<ThresholdEvent> queue_;
  std::uint64_t dropped_ = 0;
};

struct VaultOptions {
  std::uint64_t segment_target = kDefaultSegmentTarget;
  /// fdatasync journal frames and segment files as they are written.
  bool sync_writes = false;
  FaultHook fault_hook;
};

struct QuarantinedSegment {
  Category partition = Category::security;
  std::filesystem::path file;
  std::string reason;
};

struct VaultCounters {
  std::uint64_t appends = 0;
  std::uint64_t seals = 0;
  std::uint64_t evictions = 0;
  std::uint64_t archived = 0;
  std::uint64_t rebalances = 0;
};

struct TimeRange {
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // inclusive

  bool contains(Timestamp t) const { return (!from || t >= *from) && (!to || t <= *to); }
};

/// Six quota-bounded encrypted segment logs under one directory:
///
///   <dir>/p<k>/seg-<id>.iotl   sealed segments
///   <dir>/p<k>/journal.wal     write-ahead journal of the active buffer
///   <dir>/p<k>/quarantine/     segments that failed authentication on open
///   <dir>/quotas.state         quotas after the last rebalance
///
/// Appends to one partition are serialized; different partitions proceed
/// independently. The destructor does not seal: records still in the active
/// buffer stay in the journal and are recovered by the next open. Call
/// close() for a clean shutdown.
class Vault {
 public:
  Vault(std::filesystem::path dir, std::uint64_t budget, PartitionConfigs configs, std::shared_ptr<KeyRing> ring,
        std::shared_ptr<const Clock> clock, std::shared_ptr<Archiver> archiver = nullptr, VaultOptions options = {});
  Vault(const Vault&) = delete;
  Vault& operator=(const Vault&) = delete;
  ~Vault();

  /// Throws RecordTooLarge, ArchiveSinkFailure (archive policy could not
  /// make room), StorageFailure, MalformedLine (invalid record).
  Receipt append(const LogRecord& record, Category category);

  ThresholdState threshold_state(Category category) const;
  PartitionUsage usage(Category category) const;
  std::array<PartitionUsage, kCategoryCount> usages() const;

  /// Evicts oldest sealed segments until u <= T-band. Returns bytes freed.
  /// Throws ArchiveSinkFailure when the archive step fails; the segment is
  /// then kept.
  std::uint64_t enforce_retention(Category category);

  /// Applies plan_rebalance and persists the result.
  QuotaMap rebalance();

  /// Deletes (or archives then deletes) sealed segments of daily-rotation
  /// partitions created before the current UTC day. Returns bytes freed.
  std::uint64_t rotate_daily(Timestamp now);

  /// Archives sealed segments of archive_then_delete partitions not yet in
  /// the manifest. Returns how many were shipped.
  std::size_t archive_sweep();

  void flush();
  /// Re-derives every partition's state and publishes changes.
  void scan_thresholds();

  std::vector<LogRecord> query(Category category, const TimeRange& range = {},
                               std::size_t limit = std::numeric_limits<std::size_t>::max()) const;

  std::vector<SegmentInfo> segments(Category category) const;
  std::filesystem::path segment_path(SegmentId id) const;

  std::shared_ptr<EventSubscription> subscribe_events(std::size_t capacity = 1024);

  /// Seals every active buffer and releases the journals.
  void close();

  const std::vector<QuarantinedSegment>& quarantined() const { return quarantined_; }
  /// Segment decryptions performed by query(), keyed by key id.
  std::map<KeyId, std::uint64_t> decrypt_counts() const;
  VaultCounters counters() const;
  std::uint64_t next_seq(Category category) const;
  std::uint64_t budget() const { return budget_; }
  const PartitionConfig& config(Category category) const;
  const std::filesystem::path& dir() const { return dir_; }
  Archiver* archiver() const { return archiver_.get(); }

 private:
  struct Partition;

  void open_partition(Partition& p);
  void recover_journal(Partition& p);
  void write_journal_header(Partition& p, std::uint64_t base_seq, std::span<const std::byte> frames);
  void seal_locked(Partition& p);
  void ensure_room_locked(Partition& p, std::uint64_t extra);
  std::uint64_t evict_locked(Partition& p, std::uint64_t extra, bool to_retention_target);
  void evict_front_locked(Partition& p);
  void note_state_locked(Partition& p);
  void publish(const ThresholdEvent& event);
  void persist_quotas() const;
  void check_open() const;
  void fault(FaultPoint point) const;

  std::filesystem::path dir_;
  std::uint64_t budget_;
  std::shared_ptr<KeyRing> ring_;
  std::shared_ptr<const Clock> clock_;
  std::shared_ptr<Archiver> archiver_;
  VaultOptions options_;
  std::array<std::unique_ptr<Partition>, kCategoryCount> partitions_;
  std::vector<QuarantinedSegment> quarantined_;
  bool closed_ = false;

  mutable std::mutex stats_mu_;
  mutable std::map<KeyId, std::uint64_t> decrypt_counts_;
  VaultCounters counters_;

  std::mutex events_mu_;
  std::vector<std::weak_ptr<EventSubscription>> subscribers_;
};

}  // namespace loghive
