#include "loghive/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <cctype>
#include <fstream>
#include <memory>

#include "fsutil.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/error.hpp"

namespace loghive {
namespace {

using detail::get_le;
using detail::put_le;

constexpr std::string_view kSegmentMagic = "IOTL";
constexpr std::string_view kRingMagic = "IOTK";
constexpr std::uint8_t kRingVersion = 1;
constexpr std::size_t kRingHeaderBytes = 4 + 1 + 4 + 4;
constexpr std::size_t kRingEntryMetaBytes = 4 + 1 + 1 + 4 + 8;
constexpr std::size_t kRingEntryBytes = kRingEntryMetaBytes + kNonceBytes + kKeyBytes + kTagBytes;

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

CipherCtx new_ctx() {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw Error(ErrorCode::StorageFailure, "EVP_CIPHER_CTX_new failed");
  return ctx;
}

const unsigned char* uc(const std::byte* p) { return reinterpret_cast<const unsigned char*>(p); }
unsigned char* uc(std::byte* p) { return reinterpret_cast<unsigned char*>(p); }

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

Nonce make_nonce(std::uint64_t counter, std::uint32_t prefix) {
  std::vector<std::byte> buf;
  put_le<std::uint64_t>(buf, counter);
  put_le<std::uint32_t>(buf, prefix);
  Nonce n{};
  std::copy(buf.begin(), buf.end(), n.begin());
  return n;
}

}  // namespace

SecretKey::SecretKey(std::span<const std::byte, kKeyBytes> b) { std::copy(b.begin(), b.end(), bytes.begin()); }

SecretKey::~SecretKey() { OPENSSL_cleanse(bytes.data(), bytes.size()); }

SecretKey SecretKey::random() {
  SecretKey k;
  random_bytes(k.bytes);
  return k;
}

std::optional<SecretKey> SecretKey::from_hex(std::string_view hex) {
  while (!hex.empty() && std::isspace(static_cast<unsigned char>(hex.front()))) hex.remove_prefix(1);
  while (!hex.empty() && std::isspace(static_cast<unsigned char>(hex.back()))) hex.remove_suffix(1);
  auto raw = loghive::from_hex(hex);
  if (!raw || raw->size() != kKeyBytes) return std::nullopt;
  SecretKey k(std::span<const std::byte, kKeyBytes>(raw->data(), kKeyBytes));
  OPENSSL_cleanse(raw->data(), raw->size());
  return k;
}

SecretKey SecretKey::from_file(const std::filesystem::path& path) {
  auto raw = fsutil::read_file(path);
  if (raw.size() == kKeyBytes) return SecretKey(std::span<const std::byte, kKeyBytes>(raw.data(), kKeyBytes));
  if (auto k = from_hex(detail::as_chars(raw))) return *k;
  throw Error(ErrorCode::ConfigInvalid, "master key file must hold 32 raw bytes or 64 hex characters");
}

std::vector<std::byte> aead_seal(const SecretKey& key, const Nonce& nonce, std::span<const std::byte> aad,
                                 std::span<const std::byte> plaintext) {
  auto ctx = new_ctx();
  std::vector<std::byte> out(plaintext.size() + kTagBytes);
  int len = 0;
  bool ok = EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1 &&
            EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, uc(key.bytes.data()), uc(nonce.data())) == 1;
  if (ok && !aad.empty()) {
    ok = EVP_EncryptUpdate(ctx.get(), nullptr, &len, uc(aad.data()), static_cast<int>(aad.size())) == 1;
  }
  int written = 0;
  if (ok && !plaintext.empty()) {
    ok = EVP_EncryptUpdate(ctx.get(), uc(out.data()), &len, uc(plaintext.data()),
                           static_cast<int>(plaintext.size())) == 1;
    written = len;
  }
  ok = ok && EVP_EncryptFinal_ex(ctx.get(), uc(out.data()) + written, &len) == 1;
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes, uc(out.data() + plaintext.size())) == 1;
  if (!ok) throw Error(ErrorCode::StorageFailure, "AES-256-GCM encryption failed");
  return out;
}

std::vector<std::byte> aead_open(const SecretKey& key, const Nonce& nonce, std::span<const std::byte> aad,
                                 std::span<const std::byte> sealed) {
  if (sealed.size() < kTagBytes) throw Error(ErrorCode::AuthFailure, "sealed data shorter than tag");
  const auto ct = sealed.first(sealed.size() - kTagBytes);
  std::array<std::byte, kTagBytes> tag{};
  std::copy(sealed.end() - kTagBytes, sealed.end(), tag.begin());

  auto ctx = new_ctx();
  std::vector<std::byte> out(ct.size());
  int len = 0;
  bool ok = EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1 &&
            EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, uc(key.bytes.data()), uc(nonce.data())) == 1;
  if (ok && !aad.empty()) {
    ok = EVP_DecryptUpdate(ctx.get(), nullptr, &len, uc(aad.data()), static_cast<int>(aad.size())) == 1;
  }
  int written = 0;
  if (ok && !ct.empty()) {
    ok = EVP_DecryptUpdate(ctx.get(), uc(out.data()), &len, uc(ct.data()), static_cast<int>(ct.size())) == 1;
    written = len;
  }
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes, uc(tag.data())) == 1;
  if (!ok) throw Error(ErrorCode::StorageFailure, "AES-256-GCM setup failed");
  if (EVP_DecryptFinal_ex(ctx.get(), uc(out.data()) + written, &len) != 1) {
    OPENSSL_cleanse(out.data(), out.size());
    throw Error(ErrorCode::AuthFailure, "authentication tag mismatch");
  }
  return out;
}

Digest sha256(std::span<const std::byte> bytes) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), uc(d.data()), &len, EVP_sha256(), nullptr) != 1 || len != d.size()) {
    throw Error(ErrorCode::StorageFailure, "SHA-256 failed");
  }
  return d;
}

std::string to_hex(std::span<const std::byte> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::byte b : bytes) {
    const auto v = std::to_integer<unsigned>(b);
    out += kDigits[v >> 4];
    out += kDigits[v & 0xF];
  }
  return out;
}

std::optional<std::vector<std::byte>> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  std::vector<std::byte> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out[i] = static_cast<std::byte>(hi * 16 + lo);
  }
  return out;
}

void random_bytes(std::span<std::byte> out) {
  if (RAND_bytes(uc(out.data()), static_cast<int>(out.size())) != 1) {
    throw Error(ErrorCode::StorageFailure, "RAND_bytes failed");
  }
}

std::array<std::byte, kSegmentHeaderBytes> SegmentHeader::encode() const {
  std::vector<std::byte> buf;
  buf.reserve(kSegmentHeaderBytes);
  detail::put_string(buf, kSegmentMagic);
  buf.push_back(static_cast<std::byte>(version));
  buf.push_back(static_cast<std::byte>(category_code));
  put_le<std::uint32_t>(buf, key_id.value);
  detail::put_bytes(buf, nonce);
  put_le<std::uint32_t>(buf, ct_len);
  std::array<std::byte, kSegmentHeaderBytes> out{};
  std::copy(buf.begin(), buf.end(), out.begin());
  return out;
}

std::vector<std::byte> EncryptedSegment::to_bytes() const {
  std::vector<std::byte> out;
  out.reserve(size());
  const auto h = header.encode();
  detail::put_bytes(out, h);
  detail::put_bytes(out, ciphertext);
  detail::put_bytes(out, tag);
  return out;
}

EncryptedSegment EncryptedSegment::parse(std::span<const std::byte> bytes) {
  if (bytes.size() < kSegmentOverheadBytes) throw Error(ErrorCode::TruncatedSegment, "segment shorter than header");
  if (detail::as_chars(bytes.first(4)) != kSegmentMagic) throw Error(ErrorCode::CorruptSegment, "bad segment magic");
  EncryptedSegment seg;
  seg.header.version = std::to_integer<std::uint8_t>(bytes[4]);
  if (seg.header.version != kSegmentVersion) throw Error(ErrorCode::CorruptSegment, "unsupported segment version");
  seg.header.category_code = std::to_integer<std::uint8_t>(bytes[5]);
  seg.header.key_id = KeyId{get_le<std::uint32_t>(bytes, 6)};
  std::copy(bytes.begin() + 10, bytes.begin() + 22, seg.header.nonce.begin());
  seg.header.ct_len = get_le<std::uint32_t>(bytes, 22);
  if (bytes.size() != kSegmentOverheadBytes + seg.header.ct_len) {
    throw Error(ErrorCode::TruncatedSegment, "segment length disagrees with header");
  }
  seg.ciphertext.assign(bytes.begin() + kSegmentHeaderBytes, bytes.end() - kTagBytes);
  std::copy(bytes.end() - kTagBytes, bytes.end(), seg.tag.begin());
  return seg;
}

KeyRing::KeyRing(SecretKey master) : master_(std::move(master)) {}

KeyRing::KeyRing(const KeyRing& other) {
  std::lock_guard lock(other.mu_);
  master_ = other.master_;
  entries_ = other.entries_;
  active_ = other.active_;
  next_key_id_ = other.next_key_id_;
}

KeyRing& KeyRing::operator=(const KeyRing& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  master_ = other.master_;
  entries_ = other.entries_;
  active_ = other.active_;
  next_key_id_ = other.next_key_id_;
  bound_path_.reset();
  return *this;
}

bool operator==(const KeyRing& a, const KeyRing& b) {
  if (&a == &b) return true;
  std::scoped_lock lock(a.mu_, b.mu_);
  return a.master_ == b.master_ && a.entries_ == b.entries_ && a.active_ == b.active_ &&
         a.next_key_id_ == b.next_key_id_;
}

KeyRing KeyRing::generate(const SecretKey& master) {
  KeyRing ring(master);
  for (Category c : kAllCategories) ring.rotate(c);
  return ring;
}

KeyId KeyRing::install(Category partition, std::uint32_t nonce_prefix, const SecretKey& key) {
  const KeyId id{next_key_id_++};
  entries_[id] = Entry{id, partition, key, nonce_prefix, 0};
  active_[slot(partition)] = id;
  return id;
}

KeyId KeyRing::rotate(Category partition) {
  std::uint32_t prefix = 0;
  random_bytes(std::as_writable_bytes(std::span(&prefix, 1)));
  const auto key = SecretKey::random();
  std::lock_guard lock(mu_);
  const auto id = install(partition, prefix, key);
  persist_locked();
  return id;
}

std::optional<KeyId> KeyRing::active_key(Category partition) const {
  std::lock_guard lock(mu_);
  return active_[slot(partition)];
}

std::optional<KeyRing::Entry> KeyRing::find(KeyId id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t KeyRing::next_key_id() const {
  std::lock_guard lock(mu_);
  return next_key_id_;
}

std::size_t KeyRing::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

KeyRing::Reservation KeyRing::reserve(Category partition) {
  std::lock_guard lock(mu_);
  const auto active = active_[slot(partition)];
  if (!active) throw Error(ErrorCode::NoActiveKey, "no active key for " + std::string(category_name(partition)));
  auto& entry = entries_.at(*active);
  Reservation r{entry.id, entry.key, make_nonce(entry.nonce_counter, entry.nonce_prefix)};
  ++entry.nonce_counter;
  persist_locked();
  return r;
}

void KeyRing::bind_file(std::filesystem::path path) {
  std::lock_guard lock(mu_);
  bound_path_ = std::move(path);
  persist_locked();
}

void KeyRing::persist_locked() const {
  if (bound_path_) save_locked(*bound_path_);
}

void KeyRing::save(const std::filesystem::path& path) const {
  std::lock_guard lock(mu_);
  save_locked(path);
}

// Ring file:
//   "IOTK" | u8 version | u32 next_key_id | u32 entry_count
//   entry_count x { u32 key_id | u8 category | u8 flags (bit0 active)
//                   | u32 nonce_prefix | u64 nonce_counter
//                   | 12B wrap nonce | 32B wrapped key | 16B tag }
// Each key is wrapped with AES-256-GCM under the master key; the associated
// data is the file header followed by the entry's metadata, so no header or
// metadata byte can change without failing authentication.
void KeyRing::save_locked(const std::filesystem::path& path) const {
  std::vector<std::byte> out;
  detail::put_string(out, kRingMagic);
  out.push_back(static_cast<std::byte>(kRingVersion));
  put_le<std::uint32_t>(out, next_key_id_);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  const std::vector<std::byte> header(out.begin(), out.end());

  for (const auto& [id, e] : entries_) {
    std::vector<std::byte> meta;
    put_le<std::uint32_t>(meta, id.value);
    meta.push_back(static_cast<std::byte>(partition_index(e.partition)));
    meta.push_back(static_cast<std::byte>(active_[slot(e.partition)] == id ? 1 : 0));
    put_le<std::uint32_t>(meta, e.nonce_prefix);
    put_le<std::uint64_t>(meta, e.nonce_counter);

    std::vector<std::byte> aad = header;
    detail::put_bytes(aad, meta);
    Nonce wrap_nonce{};
    random_bytes(wrap_nonce);
    const auto wrapped = aead_seal(master_, wrap_nonce, aad, e.key.bytes);

    detail::put_bytes(out, meta);
    detail::put_bytes(out, wrap_nonce);
    detail::put_bytes(out, wrapped);
  }
  fsutil::write_file_atomic(path, out, true);
}

KeyRing KeyRing::load(const std::filesystem::path& path, const SecretKey& master) {
  std::vector<std::byte> in;
  try {
    in = fsutil::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptRingFile, e.what());
  }
  if (in.size() < kRingHeaderBytes) throw Error(ErrorCode::CorruptRingFile, "ring file truncated");
  if (detail::as_chars(std::span(in).first(4)) != kRingMagic) {
    throw Error(ErrorCode::CorruptRingFile, "bad ring magic");
  }
  if (std::to_integer<std::uint8_t>(in[4]) != kRingVersion) {
    throw Error(ErrorCode::CorruptRingFile, "unsupported ring version");
  }
  const auto next_id = get_le<std::uint32_t>(in, 5);
  const auto count = get_le<std::uint32_t>(in, 9);
  if (in.size() != kRingHeaderBytes + static_cast<std::size_t>(count) * kRingEntryBytes) {
    throw Error(ErrorCode::CorruptRingFile, "ring file length disagrees with entry count");
  }
  const std::span<const std::byte> header(in.data(), kRingHeaderBytes);

  KeyRing ring(master);
  ring.next_key_id_ = next_id;
  std::size_t off = kRingHeaderBytes;
  for (std::uint32_t i = 0; i < count; ++i, off += kRingEntryBytes) {
    const std::span<const std::byte> entry(in.data() + off, kRingEntryBytes);
    const auto meta = entry.first(kRingEntryMetaBytes);
    Nonce wrap_nonce{};
    std::copy_n(entry.begin() + kRingEntryMetaBytes, kNonceBytes, wrap_nonce.begin());
    std::vector<std::byte> aad(header.begin(), header.end());
    detail::put_bytes(aad, meta);
    const auto key_bytes = aead_open(master, wrap_nonce, aad, entry.subspan(kRingEntryMetaBytes + kNonceBytes));

    Entry e;
    e.id = KeyId{get_le<std::uint32_t>(meta, 0)};
    const auto cat = category_from_index(std::to_integer<int>(meta[4]));
    if (!cat) throw Error(ErrorCode::CorruptRingFile, "bad category in ring entry");
    e.partition = *cat;
    e.key = SecretKey(std::span<const std::byte, kKeyBytes>(key_bytes.data(), kKeyBytes));
    e.nonce_prefix = get_le<std::uint32_t>(meta, 6);
    e.nonce_counter = get_le<std::uint64_t>(meta, 10);
    if (e.id.value >= next_id || ring.entries_.count(e.id) != 0) {
      throw Error(ErrorCode::CorruptRingFile, "inconsistent key id");
    }
    if (std::to_integer<int>(meta[5]) & 1) ring.active_[slot(e.partition)] = e.id;
    ring.entries_[e.id] = std::move(e);
  }
  return ring;
}

EncryptedSegment seal_segment(std::span<const std::byte> plaintext, Category category, KeyRing& ring) {
  if (plaintext.empty()) throw Error(ErrorCode::StorageFailure, "refusing to seal an empty segment");
  const auto r = ring.reserve(category);
  EncryptedSegment seg;
  seg.header.category_code = static_cast<std::uint8_t>(partition_index(category));
  seg.header.key_id = r.id;
  seg.header.nonce = r.nonce;
  seg.header.ct_len = static_cast<std::uint32_t>(plaintext.size());
  const auto aad = seg.header.encode();
  auto sealed = aead_seal(r.key, r.nonce, aad, plaintext);
  std::copy(sealed.end() - kTagBytes, sealed.end(), seg.tag.begin());
  sealed.resize(plaintext.size());
  seg.ciphertext = std::move(sealed);
  return seg;
}

std::vector<std::byte> open_segment(const EncryptedSegment& seg, const KeyRing& ring) {
  const auto entry = ring.find(seg.header.key_id);
  if (!entry) throw Error(ErrorCode::UnknownKeyId, "key id " + std::to_string(seg.header.key_id.value));
  if (seg.ciphertext.size() != seg.header.ct_len) throw Error(ErrorCode::TruncatedSegment, "ciphertext length");
  if (partition_index(entry->partition) != seg.header.category_code) {
    throw Error(ErrorCode::AuthFailure, "key id is bound to a different partition");
  }
  const auto aad = seg.header.encode();
  std::vector<std::byte> sealed(seg.ciphertext);
  detail::put_bytes(sealed, seg.tag);
  return aead_open(entry->key, seg.header.nonce, aad, sealed);
}

std::vector<std::byte> open_segment(std::span<const std::byte> segment_bytes, const KeyRing& ring) {
  return open_segment(EncryptedSegment::parse(segment_bytes), ring);
}

}  // namespace loghive
