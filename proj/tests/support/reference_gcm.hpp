#pragma once

#include <array>
#include <cstdint>
#include <vector>

// Straightforward, table-free AES-256 and GCM written from the published
// algorithm descriptions. Slow on purpose; used only as a test oracle for the
// library's OpenSSL-backed primitives.
namespace reference {

using Bytes = std::vector<std::uint8_t>;

struct GcmResult {
  Bytes ciphertext;
  std::array<std::uint8_t, 16> tag{};
};

GcmResult aes256_gcm_encrypt(const Bytes& key, const Bytes& iv96, const Bytes& aad, const Bytes& plaintext);

Bytes hex(const char* text);

}  // namespace reference
