#include "test_support.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = fs::temp_directory_path() / ("loghive-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

loghive::LogRecord random_record(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  using namespace loghive;
  auto pick = [&](std::uint64_t n) { return rng() % n; };
  auto ident = [&](std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
      char c;
      do c = static_cast<char>(0x21 + pick(94)); while (c == '"');
      s.push_back(c);
    }
    return s;
  };
  LogRecord r;
  r.timestamp = Timestamp{std::chrono::microseconds{static_cast<std::int64_t>(pick(4'000'000'000'000'000ULL))}};
  r.device_id = ident(1 + pick(12));
  if (pick(2)) r.peer_id = ident(1 + pick(12));
  if (pick(3) == 0) r.category = kAllCategories[pick(kCategoryCount)];
  r.severity = static_cast<std::uint8_t>(pick(8));
  r.flags = Flags::from_bits(static_cast<std::uint8_t>(pick(32)));
  const std::size_t len = min_len + pick(max_len - min_len + 1);
  static const std::string words[] = {"firewall", "config", "Login", "denied", "eth0", "\\\"q\\\"", "é",
                                      "日本", "up",      "down",   "x",     " ",      "tab\t"};
  while (r.message.size() < len) r.message += words[pick(std::size(words))];
  // Trim to `len` without splitting a UTF-8 sequence.
  std::size_t cut = std::min(len, r.message.size());
  while (cut > 0 && cut < r.message.size() && (static_cast<unsigned char>(r.message[cut]) & 0xC0) == 0x80) --cut;
  r.message.resize(cut);
  return r;
}

std::vector<std::byte> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<char> chars((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(chars.size());
  std::transform(chars.begin(), chars.end(), out.begin(), [](char c) { return static_cast<std::byte>(c); });
  return out;
}

void write_all(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

bool contains_bytes(std::span<const std::byte> haystack, std::string_view needle) {
  const auto* begin = reinterpret_cast<const char*>(haystack.data());
  const std::string_view hay(begin, haystack.size());
  return hay.find(needle) != std::string_view::npos;
}

std::uint64_t reference_fingerprint(const std::string& message) {
  if (message.empty()) return 0;
  auto splitmix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  std::vector<std::string> shingles;
  if (message.size() < 4) {
    shingles.push_back(message);
  } else {
    for (std::size_t i = 0; i + 4 <= message.size(); ++i) shingles.push_back(message.substr(i, 4));
  }
  long counts[64] = {};
  for (const auto& sh : shingles) {
    std::uint64_t packed = sh.size();
    for (char c : sh) packed = packed * 256 + static_cast<unsigned char>(c);
    const auto h = splitmix(packed);
    for (int bit = 0; bit < 64; ++bit) counts[bit] += (h & (1ULL << bit)) ? 1 : -1;
  }
  std::uint64_t fp = 0;
  for (int bit = 0; bit < 64; ++bit) {
    if (counts[bit] > 0) fp |= 1ULL << bit;
  }
  return fp;
}

}  // namespace testing
