#include "loghive/vault.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsutil.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/error.hpp"

namespace loghive {
namespace {

using detail::get_le;
using detail::put_le;

constexpr std::string_view kJournalMagic = "IOTJ";
constexpr std::uint8_t kJournalVersion = 1;
constexpr std::size_t kJournalHeaderBytes = 4 + 1 + 8;
constexpr std::size_t kFrameHeaderBytes = 4 + 4;

std::uint32_t crc_of(std::span<const std::byte> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string segment_filename(SegmentId id) { return "seg-" + id.hex() + ".iotl"; }

std::optional<SegmentId> segment_id_from_filename(const std::string& name) {
  if (name.size() != 4 + 16 + 5 || !name.starts_with("seg-") || !name.ends_with(".iotl")) return std::nullopt;
  return SegmentId::parse_hex(std::string_view(name).substr(4, 16));
}

void set_mtime(const std::filesystem::path& path, Timestamp t) {
  const auto us = t.time_since_epoch().count();
  timespec times[2];
  times[0].tv_sec = static_cast<time_t>(us / 1'000'000);
  times[0].tv_nsec = static_cast<long>((us % 1'000'000) * 1000);
  if (times[0].tv_nsec < 0) {
    times[0].tv_sec -= 1;
    times[0].tv_nsec += 1'000'000'000;
  }
  times[1] = times[0];
  ::utimensat(AT_FDCWD, path.c_str(), times, 0);
}

Timestamp get_mtime(const std::filesystem::path& path) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0) return Timestamp{};
  return Timestamp{std::chrono::microseconds{static_cast<std::int64_t>(st.st_mtim.tv_sec) * 1'000'000 +
                                             st.st_mtim.tv_nsec / 1000}};
}

}  // namespace

std::string_view to_string(RetentionPolicy p) {
  return p == RetentionPolicy::archive_then_delete ? "archive_then_delete" : "delete_only";
}

std::optional<RetentionPolicy> parse_retention_policy(std::string_view text) {
  if (text == "archive_then_delete") return RetentionPolicy::archive_then_delete;
  if (text == "delete_only") return RetentionPolicy::delete_only;
  return std::nullopt;
}

std::string_view to_string(ThresholdState s) {
  switch (s) {
    case ThresholdState::below: return "Below";
    case ThresholdState::at: return "At";
    case ThresholdState::above: return "Above";
  }
  return "?";
}

char status_letter(ThresholdState s) {
  switch (s) {
    case ThresholdState::below: return 'B';
    case ThresholdState::at: return 'A';
    case ThresholdState::above: return 'O';
  }
  return '?';
}

ThresholdState derive_threshold_state(std::uint64_t used, std::uint64_t quota, double threshold, double band) {
  const double u = quota == 0 ? 1.0 : static_cast<double>(used) / static_cast<double>(quota);
  if (u < threshold - band) return ThresholdState::below;
  if (u > threshold + band) return ThresholdState::above;
  return ThresholdState::at;
}

PartitionConfigs default_partition_configs(std::uint64_t budget) {
  PartitionConfigs configs;
  std::uint64_t assigned = 0;
  for (Category c : kAllCategories) {
    auto& cfg = configs[slot(c)];
    cfg.category = c;
    const std::uint64_t percent = c == Category::security ? 30 : c == Category::general_info ? 10 : 15;
    cfg.quota_bytes = budget / 100 * percent + (budget % 100) * percent / 100;
    cfg.daily_rotation = c == Category::general_info;
    assigned += cfg.quota_bytes;
  }
  configs[slot(Category::security)].quota_bytes += budget - assigned;
  return configs;
}

void validate_partition_configs(std::uint64_t budget, const PartitionConfigs& configs, std::uint64_t segment_target) {
  auto invalid = [](const std::string& why) { throw Error(ErrorCode::ConfigInvalid, why); };
  if (segment_target == 0) invalid("segment target must be positive");
  std::uint64_t sum = 0;
  for (Category c : kAllCategories) {
    const auto& cfg = configs[slot(c)];
    const std::string name(category_name(c));
    if (cfg.category != c) invalid("partition configs out of order at " + name);
    if (!(cfg.band >= 0.0) || !(cfg.threshold - cfg.band > 0.0) || !(cfg.threshold + cfg.band < 1.0)) {
      invalid("threshold/band for " + name + " must satisfy 0 < T-band and T+band < 1");
    }
    if (cfg.quota_bytes < min_partition_quota(segment_target)) {
      invalid("quota for " + name + " is smaller than one segment (" +
              std::to_string(min_partition_quota(segment_target)) + " bytes)");
    }
    sum += cfg.quota_bytes;
  }
  if (sum != budget) {
    invalid("partition quotas sum to " + std::to_string(sum) + " but the budget is " + std::to_string(budget));
  }
}

QuotaMap plan_rebalance(std::span<const PartitionUsage, kCategoryCount> parts) {
  QuotaMap quotas{};
  for (std::size_t i = 0; i < kCategoryCount; ++i) quotas[i] = parts[i].quota_bytes;

  struct Donor {
    std::size_t index;
    std::uint64_t available;
  };
  std::vector<Donor> donors;
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const auto& p = parts[i];
    const double floor_fraction = p.threshold - 2 * p.band;
    if (p.state() != ThresholdState::below || floor_fraction <= 0.0) continue;
    if (!(static_cast<double>(p.used_bytes) < floor_fraction * static_cast<double>(p.quota_bytes))) continue;
    // Smallest quota that still keeps the donor strictly under T-2*band.
    auto keep = static_cast<std::uint64_t>(std::floor(static_cast<double>(p.used_bytes) / floor_fraction));
    while (!(static_cast<double>(p.used_bytes) < floor_fraction * static_cast<double>(keep))) ++keep;
    keep = std::max({keep, p.min_quota, p.used_bytes});
    const auto cap = static_cast<std::uint64_t>(static_cast<double>(p.quota_bytes) * kDonorCapFraction);
    const std::uint64_t room = p.quota_bytes > keep ? p.quota_bytes - keep : 0;
    if (const auto available = std::min(cap, room); available > 0) donors.push_back({i, available});
  }
  if (donors.empty()) return quotas;

  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const auto& p = parts[i];
    if (p.state() != ThresholdState::above) continue;
    const double ceiling = p.threshold + p.band;
    auto target = static_cast<std::uint64_t>(std::ceil(static_cast<double>(p.used_bytes) / ceiling));
    while (derive_threshold_state(p.used_bytes, target, p.threshold, p.band) == ThresholdState::above) ++target;
    std::uint64_t need = target > quotas[i] ? target - quotas[i] : 0;
    for (auto& d : donors) {
      if (need == 0) break;
      const auto take = std::min(need, d.available);
      d.available -= take;
      quotas[d.index] -= take;
      quotas[i] += take;
      need -= take;
    }
  }
  return quotas;
}

void EventSubscription::push(const ThresholdEvent& event) {
  std::lock_guard lock(mu_);
  if (queue_.size() >= capacity_) {
    queue_.pop_front();
    ++dropped_;
  }
  queue_.push_back(event);
}

std::vector<ThresholdEvent> EventSubscription::drain() {
  std::lock_guard lock(mu_);
  std::vector<ThresholdEvent> out(queue_.begin(), queue_.end());
  queue_.clear();
  return out;
}

std::uint64_t EventSubscription::dropped() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

struct Vault::Partition {
  PartitionConfig cfg;
  std::filesystem::path dir;
  mutable std::mutex mu;
  std::deque<SegmentInfo> sealed;  // oldest first
  std::uint64_t sealed_bytes = 0;
  std::vector<std::byte> buffer;  // canonical records not yet sealed
  std::uint64_t buffer_first_seq = 1;
  std::uint64_t next_seq = 1;
  fsutil::Fd journal;
  ThresholdState last_state = ThresholdState::below;

  std::uint64_t used() const { return sealed_bytes + buffer.size(); }
  std::filesystem::path journal_path() const { return dir / "journal.wal"; }
};

Vault::Vault(std::filesystem::path dir, std::uint64_t budget, PartitionConfigs configs, std::shared_ptr<KeyRing> ring,
             std::shared_ptr<const Clock> clock, std::shared_ptr<Archiver> archiver, VaultOptions options)
    : dir_(std::move(dir)),
      budget_(budget),
      ring_(std::move(ring)),
      clock_(std::move(clock)),
      archiver_(std::move(archiver)),
      options_(std::move(options)) {
  if (!ring_ || !clock_) throw Error(ErrorCode::ConfigInvalid, "vault needs a key ring and a clock");
  if (!std::filesystem::is_directory(dir_)) throw Error(ErrorCode::ConfigInvalid, "no such directory " + dir_.string());
  validate_partition_configs(budget_, configs, options_.segment_target);

  // Quotas moved by an earlier rebalance take precedence while they still
  // describe the same budget.
  if (std::ifstream in(dir_ / "quotas.state"); in) {
    QuotaMap saved{};
    std::uint64_t sum = 0;
    bool ok = true;
    for (std::size_t i = 0; i < kCategoryCount && ok; ++i) {
      int k = 0;
      ok = static_cast<bool>(in >> k >> saved[i]) && k == static_cast<int>(i + 1) &&
           saved[i] >= min_partition_quota(options_.segment_target);
      sum += saved[i];
    }
    if (ok && sum == budget_) {
      for (std::size_t i = 0; i < kCategoryCount; ++i) configs[i].quota_bytes = saved[i];
    }
  }

  for (Category c : kAllCategories) {
    auto p = std::make_unique<Partition>();
    p->cfg = configs[slot(c)];
    p->dir = dir_ / ("p" + std::to_string(partition_index(c)));
    partitions_[slot(c)] = std::move(p);
  }
  for (auto& p : partitions_) open_partition(*p);
  for (auto& p : partitions_) {
    std::lock_guard lock(p->mu);
    if (p->used() > p->cfg.quota_bytes) evict_locked(*p, 0, true);
    p->last_state = derive_threshold_state(p->used(), p->cfg.quota_bytes, p->cfg.threshold, p->cfg.band);
  }
}

Vault::~Vault() = default;

void Vault::fault(FaultPoint point) const {
  if (options_.fault_hook) options_.fault_hook(point);
}

void Vault::check_open() const {
  if (closed_) throw Error(ErrorCode::StorageFailure, "vault is closed");
}

void Vault::open_partition(Partition& p) {
  std::filesystem::create_directories(p.dir);
  const Category cat = p.cfg.category;

  std::vector<std::pair<SegmentId, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(p.dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.ends_with(".tmp")) {
      std::filesystem::remove(entry.path());  // never renamed into place
      continue;
    }
    if (const auto id = segment_id_from_filename(name)) files.emplace_back(*id, entry.path());
  }
  std::sort(files.begin(), files.end());

  for (const auto& [id, path] : files) {
    std::string reason;
    try {
      const auto bytes = fsutil::read_file(path);
      const auto seg = EncryptedSegment::parse(bytes);
      if (seg.header.category_code != partition_index(cat) || id.partition() != partition_index(cat)) {
        throw Error(ErrorCode::CorruptSegment, "segment belongs to another partition");
      }
      const auto plain = open_segment(seg, *ring_);
      const auto records = decode_records(plain);
      if (records.empty()) throw Error(ErrorCode::CorruptSegment, "empty segment");
      SegmentInfo info{id, bytes.size(), id.first_seq(), id.first_seq() + records.size() - 1, get_mtime(path)};
      if (!p.sealed.empty() && info.first_seq <= p.sealed.back().last_seq) {
        throw Error(ErrorCode::CorruptSegment, "segment overlaps its predecessor");
      }
      p.sealed.push_back(info);
      p.sealed_bytes += info.size;
      continue;
    } catch (const Error& e) {
      reason = e.what();
    }
    const auto qdir = p.dir / "quarantine";
    std::filesystem::create_directories(qdir);
    std::filesystem::rename(path, qdir / path.filename());
    quarantined_.push_back({cat, qdir / path.filename(), reason});
  }
  recover_journal(p);
}

void Vault::write_journal_header(Partition& p, std::uint64_t base_seq, std::span<const std::byte> frames) {
  std::vector<std::byte> bytes;
  detail::put_string(bytes, kJournalMagic);
  bytes.push_back(static_cast<std::byte>(kJournalVersion));
  put_le<std::uint64_t>(bytes, base_seq);
  detail::put_bytes(bytes, frames);
  p.journal.reset();
  fsutil::write_file_atomic(p.journal_path(), bytes, options_.sync_writes);
  p.journal = fsutil::Fd(::open(p.journal_path().c_str(), O_WRONLY | O_APPEND | O_CLOEXEC));
  if (!p.journal) throw Error(ErrorCode::StorageFailure, "cannot open journal " + p.journal_path().string());
}

void Vault::recover_journal(Partition& p) {
  const std::uint64_t sealed_next = p.sealed.empty() ? 1 : p.sealed.back().last_seq + 1;
  std::uint64_t base = sealed_next;
  std::vector<std::byte> kept_frames;
  std::vector<std::byte> kept_plain;
  std::uint64_t kept_first = 0;
  bool rewrite = true;

  if (std::filesystem::exists(p.journal_path())) {
    const auto bytes = fsutil::read_file(p.journal_path());
    if (bytes.size() >= kJournalHeaderBytes && detail::as_chars(std::span(bytes).first(4)) == kJournalMagic &&
        std::to_integer<std::uint8_t>(bytes[4]) == kJournalVersion) {
      const auto journal_base = get_le<std::uint64_t>(bytes, 5);
      std::size_t off = kJournalHeaderBytes;
      std::uint64_t seq = journal_base;
      bool torn = false;
      while (off < bytes.size()) {
        if (bytes.size() - off < kFrameHeaderBytes) {
          torn = true;
          break;
        }
        const auto len = get_le<std::uint32_t>(bytes, off);
        const auto crc = get_le<std::uint32_t>(bytes, off + 4);
        if (bytes.size() - off - kFrameHeaderBytes < len) {
          torn = true;
          break;
        }
        const auto payload = std::span(bytes).subspan(off + kFrameHeaderBytes, len);
        if (crc_of(payload) != crc) {
          torn = true;
          break;
        }
        try {
          (void)decode_record(payload);
        } catch (const Error&) {
          torn = true;
          break;
        }
        // Records already covered by a sealed segment were sealed just before
        // a crash that prevented the journal reset.
        if (seq >= sealed_next) {
          if (kept_plain.empty()) kept_first = seq;
          detail::put_bytes(kept_frames, std::span(bytes).subspan(off, kFrameHeaderBytes + len));
          detail::put_bytes(kept_plain, payload);
        }
        ++seq;
        off += kFrameHeaderBytes + len;
      }
      base = std::max(journal_base, sealed_next);
      if (!kept_plain.empty()) base = kept_first;
      // Untouched journal: keep appending to it in place.
      rewrite = torn || kept_plain.empty() != (seq == journal_base) || base != journal_base;
      if (!rewrite) {
        p.journal = fsutil::Fd(::open(p.journal_path().c_str(), O_WRONLY | O_APPEND | O_CLOEXEC));
        if (!p.journal) throw Error(ErrorCode::StorageFailure, "cannot open journal");
      }
    } else if (!bytes.empty()) {
      const auto qdir = p.dir / "quarantine";
      std::filesystem::create_directories(qdir);
      std::filesystem::rename(p.journal_path(), qdir / "journal.wal");
      quarantined_.push_back({p.cfg.category, qdir / "journal.wal", "bad journal header"});
    }
  }
  if (rewrite) write_journal_header(p, base, kept_frames);
  p.buffer = std::move(kept_plain);
  p.buffer_first_seq = base;
  p.next_seq = base + (p.buffer.empty() ? 0 : decode_records(p.buffer).size());
}

Receipt Vault::append(const LogRecord& record, Category category) {
  check_open();
  validate(record);
  auto& p = *partitions_[slot(category)];
  const std::uint64_t size = canonical_size(record);

  std::lock_guard lock(p.mu);
  if (size + kSegmentOverheadBytes > p.cfg.quota_bytes) {
    throw Error(ErrorCode::RecordTooLarge, "record of " + std::to_string(size) + " bytes exceeds the " +
                                               std::string(category_name(category)) + " quota");
  }
  if (!p.buffer.empty() && p.buffer.size() + size > options_.segment_target) seal_locked(p);
  ensure_room_locked(p, size);

  std::vector<std::byte> frame;
  frame.reserve(kFrameHeaderBytes + size);
  put_le<std::uint32_t>(frame, static_cast<std::uint32_t>(size));
  put_le<std::uint32_t>(frame, 0);
  append_canonical_bytes(record, frame);
  const auto crc = crc_of(std::span(frame).subspan(kFrameHeaderBytes));
  for (int i = 0; i < 4; ++i) frame[4 + i] = static_cast<std::byte>((crc >> (8 * i)) & 0xFF);

  if (options_.fault_hook) {
    const auto half = frame.size() / 2;
    fsutil::write_all(p.journal.get(), std::span(frame).first(half));
    fault(FaultPoint::journal_torn_write);
    fsutil::write_all(p.journal.get(), std::span(frame).subspan(half));
  } else {
    fsutil::write_all(p.journal.get(), frame);
  }
  if (options_.sync_writes) ::fdatasync(p.journal.get());
  fault(FaultPoint::journal_appended);

  Receipt receipt{p.next_seq, category, SegmentId::make(category, p.buffer_first_seq), p.buffer.size()};
  detail::put_bytes(p.buffer, std::span(frame).subspan(kFrameHeaderBytes));
  ++p.next_seq;
  {
    std::lock_guard stats(stats_mu_);
    ++counters_.appends;
  }
  if (p.buffer.size() >= options_.segment_target) seal_locked(p);
  note_state_locked(p);
  return receipt;
}

void Vault::ensure_room_locked(Partition& p, std::uint64_t extra) {
  if (p.used() + extra <= p.cfg.quota_bytes) return;
  evict_locked(p, extra, true);
  if (p.used() + extra > p.cfg.quota_bytes) {
    throw Error(ErrorCode::StorageFailure, "no room in " + std::string(category_name(p.cfg.category)));
  }
}

void Vault::seal_locked(Partition& p) {
  if (p.buffer.empty()) return;
  ensure_room_locked(p, kSegmentOverheadBytes);
  const Category cat = p.cfg.category;
  const auto seg = seal_segment(p.buffer, cat, *ring_);
  const auto bytes = seg.to_bytes();
  const SegmentId id = SegmentId::make(cat, p.buffer_first_seq);
  const auto path = p.dir / segment_filename(id);
  auto tmp = path;
  tmp += ".tmp";
  const auto created = clock_->now();
  {
    fsutil::Fd fd(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0600));
    if (!fd) throw Error(ErrorCode::StorageFailure, "cannot create " + tmp.string());
    fsutil::write_all(fd.get(), bytes);
    if (options_.sync_writes) ::fdatasync(fd.get());
  }
  set_mtime(tmp, created);
  fault(FaultPoint::segment_tmp_written);
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    throw Error(ErrorCode::StorageFailure, "rename failed for " + path.string() + ": " + std::strerror(errno));
  }
  if (options_.sync_writes) fsutil::sync_directory(p.dir);
  fault(FaultPoint::segment_renamed);

  write_journal_header(p, p.next_seq, {});
  fault(FaultPoint::journal_reset);

  p.sealed.push_back({id, bytes.size(), p.buffer_first_seq, p.next_seq - 1, created});
  p.sealed_bytes += bytes.size();
  p.buffer.clear();
  p.buffer_first_seq = p.next_seq;
  std::lock_guard stats(stats_mu_);
  ++counters_.seals;
}

void Vault::evict_front_locked(Partition& p) {
  const auto seg = p.sealed.front();
  const auto path = p.dir / segment_filename(seg.id);
  if (p.cfg.policy == RetentionPolicy::archive_then_delete) {
    if (!archiver_) {
      throw Error(ErrorCode::ArchiveSinkFailure,
                  "no archive sink configured for " + std::string(category_name(p.cfg.category)));
    }
    if (!archiver_->contains(seg.id)) {
      try {
        archiver_->archive_segment(fsutil::read_file(path), {seg.id, p.cfg.category, seg.size});
      } catch (const Error& e) {
        if (e.code() == ErrorCode::SinkUnreachable || e.code() == ErrorCode::ShortWrite) {
          throw Error(ErrorCode::ArchiveSinkFailure, e.what());
        }
        throw;
      }
      std::lock_guard stats(stats_mu_);
      ++counters_.archived;
    }
  }
  if (::unlink(path.c_str()) != 0 && errno != ENOENT) {
    throw Error(ErrorCode::StorageFailure, "cannot delete " + path.string() + ": " + std::strerror(errno));
  }
  fault(FaultPoint::segment_evicted);
  p.sealed.pop_front();
  p.sealed_bytes -= seg.size;
  std::lock_guard stats(stats_mu_);
  ++counters_.evictions;
}

std::uint64_t Vault::evict_locked(Partition& p, std::uint64_t extra, bool to_retention_target) {
  const double target = (p.cfg.threshold - p.cfg.band) * static_cast<double>(p.cfg.quota_bytes);
  const auto before = p.used();
  auto over = [&] {
    return p.used() + extra > p.cfg.quota_bytes || (to_retention_target && static_cast<double>(p.used()) > target);
  };
  try {
    while (!p.sealed.empty() && over()) evict_front_locked(p);
  } catch (...) {
    note_state_locked(p);
    throw;
  }
  return before - p.used();
}

std::uint64_t Vault::enforce_retention(Category category) {
  check_open();
  auto& p = *partitions_[slot(category)];
  std::lock_guard lock(p.mu);
  const auto freed = evict_locked(p, 0, true);
  note_state_locked(p);
  return freed;
}

std::uint64_t Vault::rotate_daily(Timestamp now) {
  check_open();
  const auto day_start = std::chrono::floor<std::chrono::days>(now);
  std::uint64_t freed = 0;
  for (auto& pp : partitions_) {
    auto& p = *pp;
    if (!p.cfg.daily_rotation) continue;
    std::lock_guard lock(p.mu);
    const auto before = p.used();
    try {
      while (!p.sealed.empty() && p.sealed.front().created_at < day_start) evict_front_locked(p);
    } catch (...) {
      note_state_locked(p);
      throw;
    }
    freed += before - p.used();
    note_state_locked(p);
  }
  return freed;
}

std::size_t Vault::archive_sweep() {
  check_open();
  if (!archiver_) return 0;
  std::size_t shipped = 0;
  std::optional<Error> first_error;
  for (auto& pp : partitions_) {
    auto& p = *pp;
    if (p.cfg.policy != RetentionPolicy::archive_then_delete) continue;
    std::lock_guard lock(p.mu);
    for (const auto& seg : p.sealed) {
      if (archiver_->contains(seg.id)) continue;
      try {
        archiver_->archive_segment(fsutil::read_file(p.dir / segment_filename(seg.id)),
                                   {seg.id, p.cfg.category, seg.size});
        ++shipped;
        std::lock_guard stats(stats_mu_);
        ++counters_.archived;
      } catch (const Error& e) {
        if (!first_error) first_error.emplace(ErrorCode::ArchiveSinkFailure, e.what());
        break;
      }
    }
  }
  if (first_error) throw *first_error;
  return shipped;
}

QuotaMap Vault::rebalance() {
  check_open();
  std::array<std::unique_lock<std::mutex>, kCategoryCount> locks;
  for (std::size_t i = 0; i < kCategoryCount; ++i) locks[i] = std::unique_lock(partitions_[i]->mu);

  std::array<PartitionUsage, kCategoryCount> parts;
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const auto& p = *partitions_[i];
    parts[i] = {p.cfg.category, p.cfg.quota_bytes, p.used(), p.cfg.threshold, p.cfg.band,
                min_partition_quota(options_.segment_target)};
  }
  const auto plan = plan_rebalance(std::span<const PartitionUsage, kCategoryCount>(parts));
  bool changed = false;
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    changed = changed || plan[i] != partitions_[i]->cfg.quota_bytes;
    partitions_[i]->cfg.quota_bytes = plan[i];
  }
  if (changed) {
    persist_quotas();
    std::lock_guard stats(stats_mu_);
    ++counters_.rebalances;
  }
  for (auto& p : partitions_) note_state_locked(*p);
  return plan;
}

void Vault::persist_quotas() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < kCategoryCount; ++i) out << (i + 1) << ' ' << partitions_[i]->cfg.quota_bytes << '\n';
  fsutil::write_file_atomic(dir_ / "quotas.state", detail::as_bytes(out.str()), options_.sync_writes);
}

void Vault::flush() {
  check_open();
  for (auto& p : partitions_) {
    std::lock_guard lock(p->mu);
    if (p->journal) ::fdatasync(p->journal.get());
  }
}

void Vault::scan_thresholds() {
  for (auto& p : partitions_) {
    std::lock_guard lock(p->mu);
    note_state_locked(*p);
  }
}

void Vault::note_state_locked(Partition& p) {
  const auto now = derive_threshold_state(p.used(), p.cfg.quota_bytes, p.cfg.threshold, p.cfg.band);
  if (now == p.last_state) return;
  ThresholdEvent event{p.cfg.category, p.last_state, now, clock_->now(), p.used(), p.cfg.quota_bytes};
  p.last_state = now;
  publish(event);
}

void Vault::publish(const ThresholdEvent& event) {
  std::lock_guard lock(events_mu_);
  std::erase_if(subscribers_, [](const auto& w) { return w.expired(); });
  for (auto& w : subscribers_) {
    if (auto s = w.lock()) s->push(event);
  }
}

std::shared_ptr<EventSubscription> Vault::subscribe_events(std::size_t capacity) {
  auto sub = std::make_shared<EventSubscription>(capacity);
  std::lock_guard lock(events_mu_);
  subscribers_.push_back(sub);
  return sub;
}

ThresholdState Vault::threshold_state(Category category) const { return usage(category).state(); }

PartitionUsage Vault::usage(Category category) const {
  const auto& p = *partitions_[slot(category)];
  std::lock_guard lock(p.mu);
  return {category,     p.cfg.quota_bytes, p.used(), p.cfg.threshold,
          p.cfg.band,   min_partition_quota(options_.segment_target)};
}

std::array<PartitionUsage, kCategoryCount> Vault::usages() const {
  std::array<PartitionUsage, kCategoryCount> out;
  for (Category c : kAllCategories) out[slot(c)] = usage(c);
  return out;
}

std::vector<LogRecord> Vault::query(Category category, const TimeRange& range, std::size_t limit) const {
  check_open();
  const auto& p = *partitions_[slot(category)];
  std::vector<SegmentInfo> sealed;
  std::vector<std::byte> buffer;
  {
    std::lock_guard lock(p.mu);
    sealed.assign(p.sealed.begin(), p.sealed.end());
    buffer = p.buffer;
  }

  std::vector<LogRecord> out;
  auto take = [&](std::vector<LogRecord>&& records) {
    for (auto& r : records) {
      if (out.size() >= limit) return;
      if (range.contains(r.timestamp)) out.push_back(std::move(r));
    }
  };
  for (const auto& info : sealed) {
    if (out.size() >= limit) break;
    std::vector<std::byte> bytes;
    try {
      bytes = fsutil::read_file(p.dir / segment_filename(info.id));
    } catch (const Error&) {
      continue;  // evicted after the snapshot was taken
    }
    const auto seg = EncryptedSegment::parse(bytes);
    {
      std::lock_guard stats(stats_mu_);
      ++decrypt_counts_[seg.header.key_id];
    }
    take(decode_records(open_segment(seg, *ring_)));
  }
  if (out.size() < limit) take(decode_records(buffer));
  return out;
}

std::vector<SegmentInfo> Vault::segments(Category category) const {
  const auto& p = *partitions_[slot(category)];
  std::lock_guard lock(p.mu);
  return {p.sealed.begin(), p.sealed.end()};
}

std::filesystem::path Vault::segment_path(SegmentId id) const {
  const auto cat = category_from_index(id.partition());
  if (!cat) throw Error(ErrorCode::CorruptSegment, "segment id names no partition");
  return partitions_[slot(*cat)]->dir / segment_filename(id);
}

void Vault::close() {
  if (closed_) return;
  for (auto& p : partitions_) {
    std::lock_guard lock(p->mu);
    seal_locked(*p);
    note_state_locked(*p);
    p->journal.reset();
  }
  closed_ = true;
}

std::map<KeyId, std::uint64_t> Vault::decrypt_counts() const {
  std::lock_guard stats(stats_mu_);
  return decrypt_counts_;
}

VaultCounters Vault::counters() const {
  std::lock_guard stats(stats_mu_);
  return counters_;
}

std::uint64_t Vault::next_seq(Category category) const {
  const auto& p = *partitions_[slot(category)];
  std::lock_guard lock(p.mu);
  return p.next_seq;
}

const PartitionConfig& Vault::config(Category category) const { return partitions_[slot(category)]->cfg; }

}  // namespace loghive
