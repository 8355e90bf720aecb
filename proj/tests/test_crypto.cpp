#include <doctest.h>

#include <random>
#include <set>

#include "loghive/crypto.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/error.hpp"
#include "reference_gcm.hpp"
#include "test_support.hpp"

using namespace loghive;

namespace {

std::vector<std::byte> to_bytes(const reference::Bytes& b) {
  std::vector<std::byte> out(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = static_cast<std::byte>(b[i]);
  return out;
}

SecretKey key_of(const reference::Bytes& b) {
  return SecretKey(std::span<const std::byte, kKeyBytes>(to_bytes(b).data(), kKeyBytes));
}

Nonce nonce_of(const reference::Bytes& b) {
  Nonce n{};
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = static_cast<std::byte>(b[i]);
  return n;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::StorageFailure;
}

struct Kat {
  const char* key;
  const char* iv;
  const char* aad;
  const char* pt;
  const char* ct;
  const char* tag;
};

// Published AES-256 GCM vectors (test cases 13, 14, 16 of the original GCM
// submission) plus one vector computed with an unrelated implementation
// (Python `cryptography`).
const Kat kKats[] = {
    {"0000000000000000000000000000000000000000000000000000000000000000", "000000000000000000000000", "", "", "",
     "530f8afbc74536b9a963b4f1c4cb738b"},
    {"0000000000000000000000000000000000000000000000000000000000000000", "000000000000000000000000", "",
     "00000000000000000000000000000000", "cea7403d4d606b6e074ec5d3baf39d18", "d0d1c8a799996bf0265b98b5d48ab919"},
    {"feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888",
     "feedfacedeadbeeffeedfacedeadbeefabaddad2",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657"
     "ba637b39",
     "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0a"
     "bcc9f662",
     "76fc6ece0f4e1768cddf8853bb2d551b"},
    {"000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f", "000102030405060708090a0b",
     "494f544c2d686561646572",
     "6c6f67686976652d6c6f67686976652d6c6f67686976652d6c6f67686976652d6c6f67686976652d6c6f67686976652d6c6f676869766"
     "52d6c6f67686976652d6c6f67686976652d",
     "2b6db173ac93a736e12ef0e3d89f1d40efb9e05c990d3a51540882ed741f659f6d7fc994c6b777b518cb1885e1f14d15823607e533a0c6f"
     "753f84d71719590c39c53a112baa7434c",
     "60d1b1aa82223a3a10d3d78d1e19f706"},
};

}  // namespace

TEST_CASE("reference oracle reproduces the frozen vectors") {
  for (const auto& k : kKats) {
    const auto r = reference::aes256_gcm_encrypt(reference::hex(k.key), reference::hex(k.iv), reference::hex(k.aad),
                                                 reference::hex(k.pt));
    CHECK(r.ciphertext == reference::hex(k.ct));
    CHECK(reference::Bytes(r.tag.begin(), r.tag.end()) == reference::hex(k.tag));
  }
}

TEST_CASE("aead_seal matches the known-answer vectors") {
  for (const auto& k : kKats) {
    const auto sealed = aead_seal(key_of(reference::hex(k.key)), nonce_of(reference::hex(k.iv)),
                                  to_bytes(reference::hex(k.aad)), to_bytes(reference::hex(k.pt)));
    auto expected = reference::hex(k.ct);
    const auto tag = reference::hex(k.tag);
    expected.insert(expected.end(), tag.begin(), tag.end());
    CHECK(sealed == to_bytes(expected));
    CHECK(aead_open(key_of(reference::hex(k.key)), nonce_of(reference::hex(k.iv)), to_bytes(reference::hex(k.aad)),
                    sealed) == to_bytes(reference::hex(k.pt)));
  }
}

TEST_CASE("aead_seal agrees with the reference oracle on random inputs") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    reference::Bytes key(32), iv(12), aad(rng() % 40), pt(rng() % 300);
    for (auto* v : {&key, &iv, &aad, &pt}) {
      for (auto& b : *v) b = static_cast<std::uint8_t>(rng());
    }
    const auto mine = aead_seal(key_of(key), nonce_of(iv), to_bytes(aad), to_bytes(pt));
    const auto ref = reference::aes256_gcm_encrypt(key, iv, aad, pt);
    auto expected = ref.ciphertext;
    expected.insert(expected.end(), ref.tag.begin(), ref.tag.end());
    REQUIRE(mine == to_bytes(expected));
  }
}

TEST_CASE("sha256 of abc") {
  CHECK(to_hex(sha256(detail::as_bytes("abc"))) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("segment round trip and layout") {
  auto ring = KeyRing::generate(SecretKey::random());
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::byte> pt(1 + rng() % 512);
    for (auto& b : pt) b = static_cast<std::byte>(rng());
    const auto cat = kAllCategories[rng() % 6];
    const auto seg = seal_segment(pt, cat, ring);
    const auto bytes = seg.to_bytes();
    REQUIRE(bytes.size() == pt.size() + kSegmentOverheadBytes);
    REQUIRE(open_segment(bytes, ring) == pt);
  }

  const std::vector<std::byte> pt(10, std::byte{0x41});
  const auto seg = seal_segment(pt, Category::firewall, ring);
  const auto b = seg.to_bytes();
  CHECK(detail::as_chars(std::span(b).first(4)) == "IOTL");
  CHECK(std::to_integer<int>(b[4]) == 1);
  CHECK(std::to_integer<int>(b[5]) == 5);
  CHECK(detail::get_le<std::uint32_t>(b, 6) == ring.active_key(Category::firewall)->value);
  CHECK(detail::get_le<std::uint32_t>(b, 22) == 10);
}

TEST_CASE("sealing twice uses distinct nonces and ciphertexts") {
  auto ring = KeyRing::generate(SecretKey::random());
  const std::vector<std::byte> pt(64, std::byte{7});
  const auto a = seal_segment(pt, Category::security, ring);
  const auto b = seal_segment(pt, Category::security, ring);
  CHECK(a.header.nonce != b.header.nonce);
  CHECK(a.ciphertext != b.ciphertext);
}

TEST_CASE("tampering with any bit fails authentication") {
  auto ring = KeyRing::generate(SecretKey::random());
  std::mt19937_64 rng(23);
  std::vector<std::byte> pt(200);
  for (auto& b : pt) b = static_cast<std::byte>(rng());
  const auto bytes = seal_segment(pt, Category::authentication, ring).to_bytes();
  int detected = 0;
  for (int i = 0; i < 1000; ++i) {
    auto t = bytes;
    const auto bit = rng() % (t.size() * 8);
    t[bit / 8] ^= static_cast<std::byte>(1U << (bit % 8));
    try {
      open_segment(t, ring);
    } catch (const Error&) {
      ++detected;
    }
  }
  CHECK(detected == 1000);

  SUBCASE("altered category code is an authentication failure") {
    auto t = bytes;
    t[5] = std::byte{1};
    // Key for partition 2 under a header claiming partition 1.
    CHECK(code_of([&] { open_segment(t, ring); }) == ErrorCode::AuthFailure);
  }
  SUBCASE("unknown key id") {
    auto t = bytes;
    t[6] = std::byte{0xEE};
    CHECK(code_of([&] { open_segment(t, ring); }) == ErrorCode::UnknownKeyId);
  }
  SUBCASE("truncated segment") {
    CHECK(code_of([&] { open_segment(std::span(bytes).first(bytes.size() - 1), ring); }) ==
          ErrorCode::TruncatedSegment);
    CHECK(code_of([&] { open_segment(std::span(bytes).first(10), ring); }) == ErrorCode::TruncatedSegment);
  }
}

TEST_CASE("key rotation") {
  auto ring = KeyRing::generate(SecretKey::random());
  CHECK(ring.size() == 6);
  CHECK(ring.next_key_id() == 7);
  const std::vector<std::byte> pt(32, std::byte{1});
  const auto old_seg = seal_segment(pt, Category::security, ring);
  const auto k1 = ring.rotate(Category::security);
  CHECK(k1.value == 7);
  CHECK(ring.next_key_id() == 8);
  const auto new_seg = seal_segment(pt, Category::security, ring);
  CHECK(new_seg.header.key_id == k1);
  CHECK(open_segment(old_seg, ring) == pt);
  const auto k2 = ring.rotate(Category::security);
  CHECK(k2 > k1);
  CHECK(ring.active_key(Category::firewall)->value == 5);

  KeyRing empty(SecretKey::random());
  CHECK(code_of([&] { seal_segment(pt, Category::security, empty); }) == ErrorCode::NoActiveKey);
}

TEST_CASE("ring persistence") {
  testing::TempDir dir;
  const auto master = SecretKey::random();
  auto ring = KeyRing::generate(master);
  ring.rotate(Category::general_info);
  (void)ring.reserve(Category::security);
  ring.save(dir / "ring");
  CHECK(KeyRing::load(dir / "ring", master) == ring);

  const auto raw = testing::read_all(dir / "ring");
  CHECK(detail::as_chars(std::span(raw).first(4)) == "IOTK");
  CHECK(raw.size() == 13 + 7 * (4 + 1 + 1 + 4 + 8 + 12 + 32 + 16));
  // No data key appears in the clear.
  for (std::uint32_t id = 1; id < ring.next_key_id(); ++id) {
    const auto e = ring.find(KeyId{id});
    REQUIRE(e);
    CHECK_FALSE(testing::contains_bytes(raw, detail::as_chars(e->key.bytes)));
  }

  CHECK(code_of([&] { KeyRing::load(dir / "ring", SecretKey::random()); }) == ErrorCode::AuthFailure);

  testing::write_all(dir / "short", std::span(raw).first(raw.size() - 5));
  CHECK(code_of([&] { KeyRing::load(dir / "short", master); }) == ErrorCode::CorruptRingFile);
  auto bad_magic = raw;
  bad_magic[0] = std::byte{'X'};
  testing::write_all(dir / "magic", bad_magic);
  CHECK(code_of([&] { KeyRing::load(dir / "magic", master); }) == ErrorCode::CorruptRingFile);
  auto flipped = raw;
  flipped[20] ^= std::byte{1};  // entry metadata is authenticated
  testing::write_all(dir / "flipped", flipped);
  CHECK(code_of([&] { KeyRing::load(dir / "flipped", master); }) == ErrorCode::AuthFailure);
  CHECK(code_of([&] { KeyRing::load(dir / "missing", master); }) == ErrorCode::CorruptRingFile);
}

TEST_CASE("nonces stay unique across restarts of a bound ring") {
  testing::TempDir dir;
  const auto master = SecretKey::random();
  std::set<std::pair<std::uint32_t, Nonce>> seen;
  {
    auto ring = KeyRing::generate(master);
    ring.bind_file(dir / "ring");
    for (int i = 0; i < 200; ++i) {
      const auto r = ring.reserve(kAllCategories[i % 6]);
      CHECK(seen.insert({r.id.value, r.nonce}).second);
    }
  }
  for (int restart = 0; restart < 3; ++restart) {
    auto ring = KeyRing::load(dir / "ring", master);
    ring.bind_file(dir / "ring");
    if (restart == 1) ring.rotate(Category::security);
    for (int i = 0; i < 100; ++i) {
      const auto r = ring.reserve(kAllCategories[i % 6]);
      CHECK(seen.insert({r.id.value, r.nonce}).second);
    }
  }
  CHECK(seen.size() == 500);
}

TEST_CASE("master key sources") {
  testing::TempDir dir;
  const auto k = SecretKey::random();
  testing::write_all(dir / "raw", k.bytes);
  CHECK(SecretKey::from_file(dir / "raw") == k);
  const auto hex = to_hex(k.bytes) + "\n";
  testing::write_all(dir / "hex", detail::as_bytes(hex));
  CHECK(SecretKey::from_file(dir / "hex") == k);
  testing::write_all(dir / "bad", detail::as_bytes("nothex"));
  CHECK_THROWS_AS(SecretKey::from_file(dir / "bad"), Error);
  CHECK_FALSE(SecretKey::from_hex("abc"));
}
