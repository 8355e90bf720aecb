#include "loghive/record.hpp"

#include <charconv>
#include <cstdio>

#include "loghive/detail/bytes.hpp"
#include "loghive/error.hpp"

namespace loghive {
namespace {

using detail::get_le;
using detail::put_le;

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "security", "authentication", "general_info", "configuration", "firewall", "device_management",
};

[[noreturn]] void malformed(const std::string& why) { throw Error(ErrorCode::MalformedLine, why); }

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr std::array<int, 12> kDays = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[static_cast<std::size_t>(m - 1)];
}

std::optional<int> digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) return std::nullopt;
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

bool is_token_char(unsigned char c) { return c > 0x20 && c != 0x7F && c != '"'; }

bool valid_identifier(std::string_view id) {
  if (id.empty() || id.size() > kMaxIdentifierBytes) return false;
  for (unsigned char c : id) {
    if (!is_token_char(c)) return false;
  }
  return true;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Reject overlong forms, surrogates, and out-of-range code points.
    static constexpr std::array<std::uint32_t, 4> kMin = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::BadRule: return "BadRule";
    case ErrorCode::NoActiveKey: return "NoActiveKey";
    case ErrorCode::UnknownKeyId: return "UnknownKeyId";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::TruncatedSegment: return "TruncatedSegment";
    case ErrorCode::CorruptRingFile: return "CorruptRingFile";
    case ErrorCode::RecordTooLarge: return "RecordTooLarge";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::ArchiveSinkFailure: return "ArchiveSinkFailure";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::CorruptSegment: return "CorruptSegment";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::CategoryMismatch: return "CategoryMismatch";
    case ErrorCode::SinkUnreachable: return "SinkUnreachable";
    case ErrorCode::ShortWrite: return "ShortWrite";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
  }
  return "Unknown";
}

bool is_integrity_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::AuthFailure:
    case ErrorCode::CorruptSegment:
    case ErrorCode::CorruptRingFile:
    case ErrorCode::TruncatedSegment:
    case ErrorCode::UnknownKeyId:
      return true;
    default:
      return false;
  }
}

std::optional<Category> category_from_index(int k) noexcept {
  if (k < 1 || k > static_cast<int>(kCategoryCount)) return std::nullopt;
  return static_cast<Category>(k);
}

std::string_view category_name(Category c) noexcept { return kCategoryNames[slot(c)]; }

std::optional<Category> parse_category(std::string_view name) noexcept {
  for (Category c : kAllCategories) {
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

std::string_view flag_name(Flag f) noexcept {
  switch (f) {
    case Flag::spam: return "spam";
    case Flag::malware: return "malware";
    case Flag::virus: return "virus";
    case Flag::login_success: return "login_success";
    case Flag::login_failure: return "login_failure";
  }
  return "";
}

std::optional<Flag> parse_flag(std::string_view name) noexcept {
  for (Flag f : kAllFlags) {
    if (flag_name(f) == name) return f;
  }
  return std::nullopt;
}

void validate(const LogRecord& r) {
  if (!valid_identifier(r.device_id)) malformed("invalid device id");
  if (r.peer_id && !valid_identifier(*r.peer_id)) malformed("invalid peer id");
  if (r.severity > kMaxSeverity) malformed("severity out of range");
  if ((r.flags.bits() & ~Flags::kValidMask) != 0) malformed("undefined flag bits");
  if (r.category && !category_from_index(partition_index(*r.category))) malformed("bad category");
  if (r.message.size() > kMaxMessageBytes) malformed("message exceeds 65536 bytes");
  if (r.message.find_first_of("\r\n") != std::string::npos) malformed("message contains a line break");
  if (!valid_utf8(r.message)) malformed("message is not valid UTF-8");
}

std::string SegmentId::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::optional<SegmentId> SegmentId::parse_hex(std::string_view text) {
  if (text.size() != 16) return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v, 16);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return SegmentId{v};
}

std::optional<Timestamp> parse_rfc3339(std::string_view s) {
  // YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)
  const auto year = digits(s, 0, 4);
  const auto month = digits(s, 5, 2);
  const auto day = digits(s, 8, 2);
  const auto hour = digits(s, 11, 2);
  const auto minute = digits(s, 14, 2);
  const auto second = digits(s, 17, 2);
  if (!year || !month || !day || !hour || !minute || !second) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't') || s[13] != ':' || s[16] != ':') {
    return std::nullopt;
  }
  if (*month < 1 || *month > 12 || *day < 1 || *day > days_in_month(*year, *month) || *hour > 23 ||
      *minute > 59 || *second > 59) {
    return std::nullopt;
  }
  std::size_t pos = 19;
  std::int64_t micros = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::size_t n = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      // Digits past microseconds are accepted and truncated.
      if (n < 6) micros = micros * 10 + (s[pos] - '0');
      ++n;
      ++pos;
    }
    if (n == 0 || n > 9) return std::nullopt;
    for (std::size_t i = n; i < 6; ++i) micros *= 10;
  }
  if (pos >= s.size()) return std::nullopt;
  std::int64_t offset_minutes = 0;
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else if (s[pos] == '+' || s[pos] == '-') {
    const auto oh = digits(s, pos + 1, 2);
    const auto om = digits(s, pos + 4, 2);
    if (!oh || !om || pos + 3 >= s.size() || s[pos + 3] != ':' || *oh > 23 || *om > 59) return std::nullopt;
    offset_minutes = (*oh * 60 + *om) * (s[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;

  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{*year}, std::chrono::month{static_cast<unsigned>(*month)},
                           std::chrono::day{static_cast<unsigned>(*day)}};
  const sys_days days{ymd};
  const auto local = time_point_cast<microseconds>(days) + hours{*hour} + minutes{*minute} + seconds{*second} +
                     microseconds{micros};
  return local - minutes{offset_minutes};
}

std::string format_rfc3339(Timestamp ts) {
  using namespace std::chrono;
  const auto days = floor<std::chrono::days>(ts);
  const year_month_day ymd{days};
  const hh_mm_ss tod{ts - days};
  const auto micros = tod.subseconds().count();
  char buf[40];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                        static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                        static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                        static_cast<long>(tod.seconds().count()));
  std::string out(buf, static_cast<std::size_t>(n));
  if (micros != 0) {
    std::snprintf(buf, sizeof buf, ".%06ld", static_cast<long>(micros));
    out += buf;
  }
  out += 'Z';
  return out;
}

LogRecord parse_ingest_line(std::string_view line) {
  if (line.find('\n') != std::string_view::npos) malformed("embedded newline");

  LogRecord r;
  bool have_ts = false, have_dev = false, have_msg = false, have_sev = false;
  bool have_peer = false, have_cat = false, have_flags = false;

  std::size_t pos = 0;
  while (true) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    if (pos >= line.size()) break;

    const auto eq = line.find('=', pos);
    if (eq == std::string_view::npos) malformed("token without '='");
    const std::string_view key = line.substr(pos, eq - pos);
    if (key.empty() || key.find(' ') != std::string_view::npos) malformed("bad key");
    pos = eq + 1;

    std::string value;
    bool quoted = false;
    if (pos < line.size() && line[pos] == '"') {
      quoted = true;
      ++pos;
      bool closed = false;
      while (pos < line.size()) {
        const char c = line[pos++];
        if (c == '\\') {
          if (pos >= line.size()) malformed("dangling escape");
          const char e = line[pos++];
          if (e != '"' && e != '\\') malformed("unsupported escape");
          value += e;
        } else if (c == '"') {
          closed = true;
          break;
        } else {
          value += c;
        }
      }
      if (!closed) malformed("unterminated quoted value");
      if (pos < line.size() && line[pos] != ' ') malformed("junk after quoted value");
    } else {
      const auto end = std::min(line.find(' ', pos), line.size());
      value.assign(line.substr(pos, end - pos));
      if (value.find('"') != std::string::npos) malformed("stray quote");
      pos = end;
    }

    auto once = [&](bool& seen) {
      if (seen) malformed("duplicate key " + std::string(key));
      seen = true;
    };

    if (key == "ts") {
      once(have_ts);
      const auto ts = parse_rfc3339(value);
      if (!ts) malformed("bad timestamp");
      r.timestamp = *ts;
    } else if (key == "dev") {
      once(have_dev);
      r.device_id = std::move(value);
    } else if (key == "peer") {
      once(have_peer);
      r.peer_id = std::move(value);
    } else if (key == "cat") {
      once(have_cat);
      const auto c = parse_category(value);
      if (!c) malformed("unknown category");
      r.category = *c;
    } else if (key == "sev") {
      once(have_sev);
      if (value.size() != 1 || value[0] < '0' || value[0] > '7') malformed("severity out of range");
      r.severity = static_cast<std::uint8_t>(value[0] - '0');
    } else if (key == "flags") {
      once(have_flags);
      std::size_t start = 0;
      while (true) {
        const auto comma = value.find(',', start);
        const auto piece = std::string_view(value).substr(start, comma - start);
        const auto f = parse_flag(piece);
        if (!f) malformed("unknown flag '" + std::string(piece) + "'");
        r.flags.set(*f);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    } else if (key == "msg") {
      once(have_msg);
      if (!quoted) malformed("msg must be double-quoted");
      r.message = std::move(value);
    } else {
      malformed("unknown key " + std::string(key));
    }
  }

  if (!have_ts) malformed("missing ts");
  if (!have_dev) malformed("missing dev");
  if (!have_msg) malformed("missing msg");
  validate(r);
  return r;
}

std::string format_ingest_line(const LogRecord& r) {
  std::string out = "ts=" + format_rfc3339(r.timestamp) + " dev=" + r.device_id;
  if (r.peer_id) out += " peer=" + *r.peer_id;
  if (r.category) {
    out += " cat=";
    out += category_name(*r.category);
  }
  out += " sev=";
  out += static_cast<char>('0' + r.severity);
  if (!r.flags.empty()) {
    out += " flags=";
    bool first = true;
    for (Flag f : kAllFlags) {
      if (!r.flags.has(f)) continue;
      if (!first) out += ',';
      out += flag_name(f);
      first = false;
    }
  }
  out += " msg=\"";
  for (char c : r.message) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::size_t canonical_size(const LogRecord& r) noexcept {
  return 8 + 2 + r.device_id.size() + 2 + (r.peer_id ? r.peer_id->size() : 0) + 3 + 4 + r.message.size();
}

void append_canonical_bytes(const LogRecord& r, std::vector<std::byte>& out) {
  put_le<std::int64_t>(out, r.timestamp.time_since_epoch().count());
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.device_id.size()));
  detail::put_string(out, r.device_id);
  const std::string_view peer = r.peer_id ? std::string_view(*r.peer_id) : std::string_view{};
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(peer.size()));
  detail::put_string(out, peer);
  out.push_back(static_cast<std::byte>(r.category ? partition_index(*r.category) : 0));
  out.push_back(static_cast<std::byte>(r.severity));
  out.push_back(static_cast<std::byte>(r.flags.bits()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.message.size()));
  detail::put_string(out, r.message);
}

std::vector<std::byte> canonical_bytes(const LogRecord& r) {
  std::vector<std::byte> out;
  out.reserve(canonical_size(r));
  append_canonical_bytes(r, out);
  return out;
}

LogRecord decode_record(std::span<const std::byte> in, std::size_t& offset) {
  auto need = [&](std::size_t n) {
    if (in.size() < offset || in.size() - offset < n) {
      throw Error(ErrorCode::TruncatedSegment, "record truncated");
    }
  };
  auto take_string = [&](std::size_t n) {
    need(n);
    std::string s(detail::as_chars(in.subspan(offset, n)));
    offset += n;
    return s;
  };

  LogRecord r;
  need(8);
  r.timestamp = Timestamp{std::chrono::microseconds{get_le<std::int64_t>(in, offset)}};
  offset += 8;
  need(2);
  const auto dev_len = get_le<std::uint16_t>(in, offset);
  offset += 2;
  r.device_id = take_string(dev_len);
  need(2);
  const auto peer_len = get_le<std::uint16_t>(in, offset);
  offset += 2;
  if (peer_len > 0) r.peer_id = take_string(peer_len);
  need(3);
  const auto cat = std::to_integer<std::uint8_t>(in[offset]);
  if (cat != 0) {
    r.category = category_from_index(cat);
    if (!r.category) malformed("bad category code");
  }
  r.severity = std::to_integer<std::uint8_t>(in[offset + 1]);
  const auto flag_bits = std::to_integer<std::uint8_t>(in[offset + 2]);
  if ((flag_bits & ~Flags::kValidMask) != 0) malformed("undefined flag bits");
  r.flags = Flags::from_bits(flag_bits);
  offset += 3;
  need(4);
  const auto msg_len = get_le<std::uint32_t>(in, offset);
  offset += 4;
  if (msg_len > kMaxMessageBytes) malformed("message exceeds 65536 bytes");
  r.message = take_string(msg_len);
  validate(r);
  return r;
}

LogRecord decode_record(std::span<const std::byte> bytes) {
  std::size_t offset = 0;
  auto r = decode_record(bytes, offset);
  if (offset != bytes.size()) malformed("trailing bytes after record");
  return r;
}

std::vector<LogRecord> decode_records(std::span<const std::byte> bytes) {
  std::vector<LogRecord> out;
  std::size_t offset = 0;
  while (offset < bytes.size()) out.push_back(decode_record(bytes, offset));
  return out;
}

}  // namespace loghive
