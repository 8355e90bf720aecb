#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "loghive/record.hpp"

namespace loghive {

inline constexpr std::size_t kKeyBytes = 32;
inline constexpr std::size_t kNonceBytes = 12;
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kSegmentHeaderBytes = 26;
inline constexpr std::size_t kSegmentOverheadBytes = kSegmentHeaderBytes + kTagBytes;
inline constexpr std::uint8_t kSegmentVersion = 1;

using Nonce = std::array<std::byte, kNonceBytes>;
using Digest = std::array<std::byte, 32>;

/// 256-bit secret; zeroed on destruction.
struct SecretKey {
  std::array<std::byte, kKeyBytes> bytes{};

  SecretKey() = default;
  explicit SecretKey(std::span<const std::byte, kKeyBytes> b);
  SecretKey(const SecretKey&) = default;
  SecretKey& operator=(const SecretKey&) = default;
  ~SecretKey();

  static SecretKey random();
  /// 64 hex characters, surrounding whitespace ignored.
  static std::optional<SecretKey> from_hex(std::string_view hex);
  /// A key file holds either 32 raw bytes or 64 hex characters.
  static SecretKey from_file(const std::filesystem::path& path);

  friend bool operator==(const SecretKey&, const SecretKey&) = default;
};

struct KeyId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(KeyId, KeyId) = default;
};

// Thin AES-256-GCM and SHA-256 primitives.
std::vector<std::byte> aead_seal(const SecretKey& key, const Nonce& nonce, std::span<const std::byte> aad,
                                 std::span<const std::byte> plaintext);  // ciphertext || tag
/// Throws Error(AuthFailure) on any authentication mismatch.
std::vector<std::byte> aead_open(const SecretKey& key, const Nonce& nonce, std::span<const std::byte> aad,
                                 std::span<const std::byte> sealed);
Digest sha256(std::span<const std::byte> bytes);
std::string to_hex(std::span<const std::byte> bytes);
std::optional<std::vector<std::byte>> from_hex(std::string_view hex);
void random_bytes(std::span<std::byte> out);

struct SegmentHeader {
  std::uint8_t version = kSegmentVersion;
  std::uint8_t category_code = 0;
  KeyId key_id;
  Nonce nonce{};
  std::uint32_t ct_len = 0;

  std::array<std::byte, kSegmentHeaderBytes> encode() const;
};

/// At-rest unit:
///   "IOTL" | u8 version | u8 category | u32 key_id | 12B nonce | u32 ct_len
///   | ciphertext (ct_len bytes) | 16B tag
/// The 26 header bytes are bound as associated data.
struct EncryptedSegment {
  SegmentHeader header;
  std::vector<std::byte> ciphertext;
  std::array<std::byte, kTagBytes> tag{};

  std::vector<std::byte> to_bytes() const;
  std::size_t size() const { return kSegmentOverheadBytes + ciphertext.size(); }

  /// Structural parse only (no authentication). Throws Error(TruncatedSegment)
  /// when lengths disagree and Error(CorruptSegment) on bad magic/version.
  static EncryptedSegment parse(std::span<const std::byte> bytes);
};

/// Device master key plus per-partition data keys. Mutations and nonce
/// reservations are serialized on an internal mutex. When bound to a file,
/// every mutation is persisted before it returns, so a nonce handed out is
/// never handed out again after a restart.
///
/// Nonce layout: u64 little-endian per-key counter followed by a 32-bit
/// random prefix chosen when the key is created.
class KeyRing {
 public:
  struct Entry {
    KeyId id;
    Category partition = Category::security;
    SecretKey key;
    std::uint32_t nonce_prefix = 0;
    std::uint64_t nonce_counter = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  struct Reservation {
    KeyId id;
    SecretKey key;
    Nonce nonce{};
  };

  explicit KeyRing(SecretKey master);
  KeyRing(const KeyRing& other);
  KeyRing& operator=(const KeyRing& other);

  /// A ring with one fresh active data key per partition.
  static KeyRing generate(const SecretKey& master);

  KeyId rotate(Category partition);
  std::optional<KeyId> active_key(Category partition) const;
  std::optional<Entry> find(KeyId id) const;
  std::uint32_t next_key_id() const;
  std::size_t size() const;

  /// Hands out the next nonce for the partition's active key. Throws
  /// Error(NoActiveKey).
  Reservation reserve(Category partition);

  void save(const std::filesystem::path& path) const;
  /// Throws Error(AuthFailure) for a wrong master key and
  /// Error(CorruptRingFile) for structural damage.
  static KeyRing load(const std::filesystem::path& path, const SecretKey& master);
  void bind_file(std::filesystem::path path);

  friend bool operator==(const KeyRing& a, const KeyRing& b);

 private:
  KeyId install(Category partition, std::uint32_t nonce_prefix, const SecretKey& key);
  void persist_locked() const;
  void save_locked(const std::filesystem::path& path) const;

  mutable std::mutex mu_;
  SecretKey master_;
  std::map<KeyId, Entry> entries_;
  std::array<std::optional<KeyId>, kCategoryCount> active_{};
  std::uint32_t next_key_id_ = 1;
  std::optional<std::filesystem::path> bound_path_;
};

EncryptedSegment seal_segment(std::span<const std::byte> plaintext, Category category, KeyRing& ring);
/// Throws UnknownKeyId, AuthFailure.
std::vector<std::byte> open_segment(const EncryptedSegment& segment, const KeyRing& ring);
/// Parse + open; additionally throws TruncatedSegment / CorruptSegment.
std::vector<std::byte> open_segment(std::span<const std::byte> segment_bytes, const KeyRing& ring);

}  // namespace loghive
