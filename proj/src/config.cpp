#include "loghive/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

#include "fsutil.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/error.hpp"

namespace loghive {
namespace {

[[noreturn]] void invalid(const std::string& why) { throw Error(ErrorCode::ConfigInvalid, why); }

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) invalid(std::string(key) + ": expected an integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) {
    invalid(std::string(key) + ": expected a number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  invalid(std::string(key) + ": expected true or false");
}

Category category_suffix(std::string_view key, std::string_view suffix) {
  const auto c = parse_category(suffix);
  if (!c) invalid(std::string(key) + ": unknown category");
  return *c;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

QuotaFractions default_quota_fractions() { return {0.30, 0.15, 0.10, 0.15, 0.15, 0.15}; }

QuotaMap quotas_from_fractions(std::uint64_t budget, const QuotaFractions& fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) invalid("every quota fraction must be positive");
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) invalid("quota fractions sum to " + format_double(sum) + ", not 1");
  QuotaMap q{};
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    q[i] = static_cast<std::uint64_t>(std::floor(static_cast<long double>(budget) * fractions[i]));
    assigned += q[i];
  }
  if (assigned > budget) invalid("quota fractions exceed the budget");
  q[slot(Category::security)] += budget - assigned;
  return q;
}

EngineConfig::EngineConfig() : partitions(default_partition_configs(total_budget)) {}

void EngineConfig::finalize() {
  if (device_id.empty() || device_id.size() > kMaxIdentifierBytes) invalid("device_id must be 1..255 bytes");
  for (unsigned char c : device_id) {
    if (c <= 0x20 || c == 0x7F || c == '"') invalid("device_id contains a space, control or quote character");
  }
  const auto quotas = quotas_from_fractions(total_budget, fractions);
  for (std::size_t i = 0; i < kCategoryCount; ++i) partitions[i].quota_bytes = quotas[i];
  validate_partition_configs(total_budget, partitions, segment_target);
  if (!sink.empty() && sink != "none" && !sink.starts_with("dir:") && !sink.starts_with("tcp:")) {
    invalid("sink must be none, dir:<path> or tcp:<host>:<port>");
  }
}

EngineConfig EngineConfig::parse(std::string_view text) {
  EngineConfig cfg;
  std::string rule_text;
  std::set<std::string, std::less<>> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) invalid("line " + std::to_string(line_no) + ": expected key = value");
    const auto key = strip(line.substr(0, eq));
    const auto value = strip(line.substr(eq + 1));
    if (!seen.emplace(key).second) invalid("duplicate key " + std::string(key));
    const auto dot = key.find('.');
    const auto head = key.substr(0, dot);
    const auto tail = dot == std::string_view::npos ? std::string_view{} : key.substr(dot + 1);

    if (key == "device_id") {
      cfg.device_id = value;
    } else if (key == "total_budget") {
      cfg.total_budget = parse_u64(key, value);
    } else if (key == "segment_target") {
      cfg.segment_target = parse_u64(key, value);
    } else if (key == "sink") {
      cfg.sink = value;
    } else if (key == "master_key_file") {
      cfg.master_key_file = std::filesystem::path(value);
    } else if (key == "master_key_env") {
      cfg.master_key_env = std::string(value);
    } else if (key == "fallback") {
      rule_text += "fallback " + std::string(value) + "\n";
    } else if (head == "rule" && !tail.empty()) {
      rule_text += "rule " + std::string(tail) + " " + std::string(value) + "\n";
    } else if (head == "period" && !tail.empty()) {
      const auto job = parse_job(tail);
      if (!job) invalid(std::string(key) + ": unknown job");
      const double seconds = parse_double(key, value);
      if (!(seconds > 0.0)) invalid(std::string(key) + ": period must be positive");
      cfg.periods[static_cast<std::size_t>(*job)] =
          std::chrono::microseconds(static_cast<std::int64_t>(std::llround(seconds * 1e6)));
    } else if (head == "quota" && !tail.empty()) {
      cfg.fractions[slot(category_suffix(key, tail))] = parse_double(key, value);
    } else if (head == "threshold" && !tail.empty()) {
      cfg.partitions[slot(category_suffix(key, tail))].threshold = parse_double(key, value);
    } else if (head == "band" && !tail.empty()) {
      cfg.partitions[slot(category_suffix(key, tail))].band = parse_double(key, value);
    } else if (head == "policy" && !tail.empty()) {
      const auto p = parse_retention_policy(value);
      if (!p) invalid(std::string(key) + ": expected archive_then_delete or delete_only");
      cfg.partitions[slot(category_suffix(key, tail))].policy = *p;
    } else if (head == "daily_rotation" && !tail.empty()) {
      cfg.partitions[slot(category_suffix(key, tail))].daily_rotation = parse_bool(key, value);
    } else {
      invalid("unknown key " + std::string(key));
    }
  }
  cfg.rules = load_rules(rule_text);
  cfg.finalize();
  return cfg;
}

EngineConfig EngineConfig::load(const std::filesystem::path& path) {
  std::vector<std::byte> bytes;
  try {
    bytes = fsutil::read_file(path);
  } catch (const Error& e) {
    invalid("cannot read " + path.string());
  }
  return parse(detail::as_chars(bytes));
}

std::string EngineConfig::to_text() const {
  std::ostringstream out;
  out << "device_id = " << device_id << "\n";
  out << "total_budget = " << total_budget << "\n";
  out << "segment_target = " << segment_target << "\n";
  for (Category c : kAllCategories) {
    const auto& p = partitions[slot(c)];
    const auto name = category_name(c);
    out << "quota." << name << " = " << format_double(fractions[slot(c)]) << "\n";
    out << "threshold." << name << " = " << format_double(p.threshold) << "\n";
    out << "band." << name << " = " << format_double(p.band) << "\n";
    out << "policy." << name << " = " << to_string(p.policy) << "\n";
    out << "daily_rotation." << name << " = " << (p.daily_rotation ? "true" : "false") << "\n";
  }
  for (const auto& r : rules.rules()) {
    out << "rule." << r.priority << " = " << format_predicate(r.predicate) << " " << category_name(r.target) << "\n";
  }
  out << "fallback = " << category_name(rules.fallback()) << "\n";
  for (Job j : kAllJobs) {
    out << "period." << to_string(j) << " = "
        << format_double(static_cast<double>(periods[static_cast<std::size_t>(j)].count()) / 1e6) << "\n";
  }
  out << "sink = " << (sink.empty() ? "none" : sink) << "\n";
  if (master_key_file) out << "master_key_file = " << master_key_file->string() << "\n";
  if (master_key_env) out << "master_key_env = " << *master_key_env << "\n";
  return out.str();
}

SecretKey EngineConfig::master_key(const std::filesystem::path& base_dir) const {
  if (master_key_env) {
    const char* v = std::getenv(master_key_env->c_str());
    if (!v) invalid("environment variable " + *master_key_env + " is not set");
    const auto key = SecretKey::from_hex(v);
    if (!key) invalid("environment variable " + *master_key_env + " must hold 64 hex characters");
    return *key;
  }
  if (master_key_file) {
    const auto path = master_key_file->is_absolute() ? *master_key_file : base_dir / *master_key_file;
    return SecretKey::from_file(path);
  }
  invalid("no master_key_file or master_key_env configured");
}

}  // namespace loghive
