#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "loghive/clock.hpp"
#include "loghive/crypto.hpp"
#include "loghive/fault.hpp"
#include "loghive/record.hpp"

namespace loghive {

struct SegmentMeta {
  SegmentId id;
  Category category = Category::security;
  std::uint64_t size = 0;
};

struct ManifestEntry {
  SegmentId id;
  std::uint8_t category_code = 0;
  std::uint64_t size = 0;
  Digest digest{};
  Timestamp archived_at{};

  /// `<id> <cat> <size> <hex digest> <rfc3339>`
  std::string to_line() const;
  static std::optional<ManifestEntry> parse_line(std::string_view line);

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Append-only ledger of archived segments, one line per entry.
class Manifest {
 public:
  Manifest() = default;
  /// Loads an existing file (missing file = empty). A torn final line is
  /// ignored; any other unparsable line throws Error(CorruptSegment).
  static Manifest load(const std::filesystem::path& path);

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  const ManifestEntry* find(SegmentId id) const;

  /// Appends the line to `path` (fsync'd) and records it in memory.
  void append(const std::filesystem::path& path, const ManifestEntry& entry);

 private:
  std::vector<ManifestEntry> entries_;
  std::map<SegmentId, std::size_t> index_;
};

/// Destination for evicted segments. Implementations are all-or-nothing per
/// segment and throw Error(SinkUnreachable) or Error(ShortWrite) on failure.
class ArchiveSink {
 public:
  virtual ~ArchiveSink() = default;
  virtual void store(SegmentId id, std::span<const std::byte> segment, const Digest& digest) = 0;
  virtual std::string describe() const = 0;
};

/// Files named seg-<id>.iotl, written via temp file and rename.
class DirectorySink final : public ArchiveSink {
 public:
  explicit DirectorySink(std::filesystem::path dir, bool sync = true);
  void store(SegmentId id, std::span<const std::byte> segment, const Digest& digest) override;
  std::string describe() const override { return "dir:" + dir_.string(); }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  bool sync_;
};

// Wire frame, all integers little-endian:
//   "IOTA" | u32 segment length | u64 segment id | segment bytes | 32B SHA-256
// The receiver answers with the 32-byte digest once the segment is durable.
inline constexpr std::uint32_t kMaxFrameSegmentBytes = 64U << 20;

std::vector<std::byte> encode_frame(SegmentId id, std::span<const std::byte> segment);

class RemoteSink final : public ArchiveSink {
 public:
  RemoteSink(std::string host, std::uint16_t port, std::chrono::milliseconds io_timeout = std::chrono::seconds(10));
  void store(SegmentId id, std::span<const std::byte> segment, const Digest& digest) override;
  std::string describe() const override { return "tcp:" + host_ + ":" + std::to_string(port_); }

 private:
  std::string host_;
  std::uint16_t port_;
  std::chrono::milliseconds timeout_;
};

/// Parses `dir:<path>` or `tcp:<host>:<port>`; `none` or empty yields null.
std::unique_ptr<ArchiveSink> make_sink(std::string_view spec);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
};

class Archiver {
 public:
  Archiver(std::unique_ptr<ArchiveSink> sink, std::filesystem::path manifest_path, std::shared_ptr<const Clock> clock,
           RetryPolicy retry = {});

  /// Ships the segment and records it. Re-archiving an id already in the
  /// manifest returns the existing entry without touching the sink. Throws
  /// SinkUnreachable / ShortWrite after the retry budget is spent; no
  /// manifest entry exists in that case.
  ManifestEntry archive_segment(std::span<const std::byte> segment_bytes, const SegmentMeta& meta);

  bool contains(SegmentId id) const;
  Manifest manifest() const;
  const ArchiveSink& sink() const { return *sink_; }
  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

 private:
  std::unique_ptr<ArchiveSink> sink_;
  std::filesystem::path manifest_path_;
  std::shared_ptr<const Clock> clock_;
  RetryPolicy retry_;
  FaultHook fault_hook_;
  mutable std::mutex mu_;
  Manifest manifest_;
};

struct ArchiveMismatch {
  enum class Kind { missing, digest_mismatch };
  SegmentId id;
  Kind kind = Kind::missing;

  friend bool operator==(const ArchiveMismatch&, const ArchiveMismatch&) = default;
};

/// Re-hashes every manifest entry's file in `sink_dir`. Throws
/// Error(SinkUnreachable) when the directory cannot be read.
std::vector<ArchiveMismatch> verify_archive(const Manifest& manifest, const std::filesystem::path& sink_dir);

/// Receiving side of RemoteSink. Each connection is served on its own thread
/// and may carry any number of frames; a frame is written to the directory
/// only after it has been received in full and its digest checks out.
class RemoteSinkServer {
 public:
  RemoteSinkServer(std::string host, std::uint16_t port, std::filesystem::path out_dir);
  RemoteSinkServer(const RemoteSinkServer&) = delete;
  RemoteSinkServer& operator=(const RemoteSinkServer&) = delete;
  ~RemoteSinkServer();

  /// Binds and starts accepting in the background. Port 0 picks an ephemeral port.
  void start();
  void stop();
  /// Blocks serving until stop() is called from elsewhere.
  void run();
  std::uint16_t port() const { return bound_port_; }

  std::uint64_t frames_stored() const { return frames_stored_.load(); }
  std::uint64_t frames_rejected() const { return frames_rejected_.load(); }

 private:
  void bind_listener();
  void accept_loop();
  void serve_connection(int fd);
  void serve_frames(int fd);

  std::string host_;
  std::uint16_t port_;
  std::uint16_t bound_port_ = 0;
  DirectorySink sink_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
  std::mutex store_mu_;
  std::atomic<std::uint64_t> frames_stored_{0};
  std::atomic<std::uint64_t> frames_rejected_{0};
};

}  // namespace loghive
