#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace loghive {

using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;

/// The six log categories. The integer code is also the partition index
/// k of mem_log<k> and is what lands on disk, so never renumber.
enum class Category : std::uint8_t {
  security = 1,
  authentication = 2,
  general_info = 3,
  configuration = 4,
  firewall = 5,
  device_management = 6,
};

inline constexpr std::size_t kCategoryCount = 6;

inline constexpr std::array<Category, kCategoryCount> kAllCategories = {
    Category::security,      Category::authentication, Category::general_info,
    Category::configuration, Category::firewall,       Category::device_management,
};

constexpr int partition_index(Category c) noexcept { return static_cast<int>(c); }
constexpr std::size_t slot(Category c) noexcept { return static_cast<std::size_t>(c) - 1; }

std::optional<Category> category_from_index(int k) noexcept;
std::string_view category_name(Category c) noexcept;
std::optional<Category> parse_category(std::string_view name) noexcept;

enum class Flag : std::uint8_t {
  spam = 1U << 0,
  malware = 1U << 1,
  virus = 1U << 2,
  login_success = 1U << 3,
  login_failure = 1U << 4,
};

inline constexpr std::array<Flag, 5> kAllFlags = {Flag::spam, Flag::malware, Flag::virus,
                                                  Flag::login_success, Flag::login_failure};

std::string_view flag_name(Flag f) noexcept;
std::optional<Flag> parse_flag(std::string_view name) noexcept;

class Flags {
 public:
  static constexpr std::uint8_t kValidMask = 0x1F;

  constexpr Flags() = default;
  constexpr Flags(std::initializer_list<Flag> flags) {
    for (Flag f : flags) bits_ |= static_cast<std::uint8_t>(f);
  }
  static constexpr Flags from_bits(std::uint8_t bits) {
    Flags f;
    f.bits_ = bits & kValidMask;
    return f;
  }

  constexpr bool has(Flag f) const { return (bits_ & static_cast<std::uint8_t>(f)) != 0; }
  constexpr bool any_of(Flags other) const { return (bits_ & other.bits_) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr void set(Flag f) { bits_ |= static_cast<std::uint8_t>(f); }
  constexpr std::uint8_t bits() const { return bits_; }

  friend constexpr bool operator==(Flags, Flags) = default;

 private:
  std::uint8_t bits_ = 0;
};

inline constexpr std::uint8_t kMaxSeverity = 7;
inline constexpr std::uint8_t kDefaultSeverity = 6;
inline constexpr std::size_t kMaxMessageBytes = 65536;
inline constexpr std::size_t kMaxIdentifierBytes = 255;

struct LogRecord {
  Timestamp timestamp{};
  std::string device_id;
  std::optional<std::string> peer_id;
  std::optional<Category> category;
  std::uint8_t severity = kDefaultSeverity;
  Flags flags;
  std::string message;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

/// Throws Error(MalformedLine) when any LogRecord invariant is violated.
void validate(const LogRecord& record);

/// Segment identifier: partition index in the top 16 bits, first record
/// sequence of the segment in the low 48. Unique across all partitions of a
/// vault and ordered by creation within one partition.
struct SegmentId {
  std::uint64_t value = 0;

  static constexpr SegmentId make(Category c, std::uint64_t first_seq) {
    return SegmentId{(static_cast<std::uint64_t>(partition_index(c)) << 48) |
                     (first_seq & 0xFFFF'FFFF'FFFFULL)};
  }
  constexpr std::uint64_t first_seq() const { return value & 0xFFFF'FFFF'FFFFULL; }
  constexpr int partition() const { return static_cast<int>(value >> 48); }

  /// 16 lowercase hex digits; used in filenames and the archive manifest.
  std::string hex() const;
  static std::optional<SegmentId> parse_hex(std::string_view text);

  friend constexpr auto operator<=>(SegmentId, SegmentId) = default;
};

struct Receipt {
  std::uint64_t record_seq = 0;
  Category partition = Category::general_info;
  SegmentId segment_id;
  std::uint64_t byte_offset = 0;

  friend bool operator==(const Receipt&, const Receipt&) = default;
};

// RFC 3339 instants. Parsing normalizes any offset to UTC; formatting always
// emits `Z` and a fractional part only when the microsecond field is nonzero.
std::optional<Timestamp> parse_rfc3339(std::string_view text);
std::string format_rfc3339(Timestamp ts);

/// Parses one ingest line. Throws Error(MalformedLine).
LogRecord parse_ingest_line(std::string_view line);

/// Inverse of parse_ingest_line for valid records.
std::string format_ingest_line(const LogRecord& record);

/// Deterministic length-prefixed encoding (all integers little-endian):
///   i64 timestamp_us | u16 dev_len | dev | u16 peer_len | peer
///   | u8 category (0 = untagged) | u8 severity | u8 flags | u32 msg_len | msg
/// peer_len 0 means no peer; identifiers are never empty.
std::vector<std::byte> canonical_bytes(const LogRecord& record);
void append_canonical_bytes(const LogRecord& record, std::vector<std::byte>& out);
std::size_t canonical_size(const LogRecord& record) noexcept;

/// Decodes one record starting at `offset`, advancing it. Throws
/// Error(TruncatedSegment) on short input and Error(MalformedLine) if the
/// decoded fields violate record invariants.
LogRecord decode_record(std::span<const std::byte> bytes, std::size_t& offset);
LogRecord decode_record(std::span<const std::byte> bytes);

/// Decodes a concatenation of canonical records (a segment plaintext).
std::vector<LogRecord> decode_records(std::span<const std::byte> bytes);

}  // namespace loghive
