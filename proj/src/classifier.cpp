#include "loghive/classifier.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "loghive/error.hpp"

namespace loghive {
namespace {

[[noreturn]] void bad_rule(const std::string& why) { throw Error(ErrorCode::BadRule, why); }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool contains_ci(std::string_view haystack, std::string_view lowered_needle) {
  if (lowered_needle.size() > haystack.size()) return false;
  const auto it = std::search(haystack.begin(), haystack.end(), lowered_needle.begin(), lowered_needle.end(),
                              [](char h, char n) { return lower(h) == n; });
  return it != haystack.end();
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const auto start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

bool matches(const Predicate& predicate, const LogRecord& record) {
  return std::visit(
      [&](const auto& p) -> bool {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, HasFlag>) {
          return record.flags.any_of(p.any);
        } else if constexpr (std::is_same_v<P, MessageContains>) {
          return contains_ci(record.message, p.token);
        } else if constexpr (std::is_same_v<P, SeverityAtMost>) {
          return record.severity <= p.level;
        } else {
          return record.peer_id.has_value();
        }
      },
      predicate);
}

std::string format_predicate(const Predicate& predicate) {
  return std::visit(
      [](const auto& p) -> std::string {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, HasFlag>) {
          std::string names;
          for (Flag f : kAllFlags) {
            if (!p.any.has(f)) continue;
            if (!names.empty()) names += '|';
            names += flag_name(f);
          }
          return "has_flag(" + names + ")";
        } else if constexpr (std::is_same_v<P, MessageContains>) {
          return "message_contains(" + p.token + ")";
        } else if constexpr (std::is_same_v<P, SeverityAtMost>) {
          return "severity_at_most(" + std::to_string(p.level) + ")";
        } else {
          return "peer_present";
        }
      },
      predicate);
}

RuleTable::RuleTable(std::vector<Rule> rules, Category fallback) : rules_(std::move(rules)), fallback_(fallback) {
  std::sort(rules_.begin(), rules_.end(), [](const Rule& a, const Rule& b) { return a.priority < b.priority; });
  for (std::size_t i = 1; i < rules_.size(); ++i) {
    if (rules_[i].priority == rules_[i - 1].priority) {
      bad_rule("duplicate priority " + std::to_string(rules_[i].priority));
    }
  }
  for (const auto& r : rules_) {
    if (const auto* mc = std::get_if<MessageContains>(&r.predicate); mc && mc->token.empty()) {
      bad_rule("empty message_contains token");
    }
    if (const auto* hf = std::get_if<HasFlag>(&r.predicate); hf && hf->any.empty()) {
      bad_rule("has_flag without flags");
    }
  }
}

Category classify(const LogRecord& record, const RuleTable& table) {
  if (record.category) return *record.category;
  for (const auto& rule : table.rules()) {
    if (matches(rule.predicate, record)) return rule.target;
  }
  return table.fallback();
}

RuleTable default_rules() {
  return RuleTable(
      {
          {10, HasFlag{Flags{Flag::spam, Flag::malware, Flag::virus}}, Category::security},
          {20, HasFlag{Flags{Flag::login_success, Flag::login_failure}}, Category::authentication},
          {30, MessageContains{"firewall"}, Category::firewall},
          {40, MessageContains{"config"}, Category::configuration},
          {50, PeerPresent{}, Category::device_management},
      },
      Category::general_info);
}

Predicate parse_predicate(std::string_view text) {
  text = strip(text);
  if (text == "peer_present") return PeerPresent{};
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.back() != ')') bad_rule("unknown predicate '" + std::string(text) + "'");
  const auto name = text.substr(0, open);
  const auto arg = strip(text.substr(open + 1, text.size() - open - 2));
  if (name == "has_flag") {
    Flags flags;
    std::size_t start = 0;
    while (true) {
      const auto bar = arg.find('|', start);
      const auto piece = strip(arg.substr(start, bar == std::string_view::npos ? arg.npos : bar - start));
      const auto f = parse_flag(piece);
      if (!f) bad_rule("unknown flag '" + std::string(piece) + "'");
      flags.set(*f);
      if (bar == std::string_view::npos) break;
      start = bar + 1;
    }
    return HasFlag{flags};
  }
  if (name == "message_contains") {
    if (arg.empty()) bad_rule("empty message_contains token");
    std::string token(arg);
    std::transform(token.begin(), token.end(), token.begin(), lower);
    return MessageContains{std::move(token)};
  }
  if (name == "severity_at_most") {
    int level = -1;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), level);
    if (ec != std::errc{} || ptr != arg.data() + arg.size() || level < 0 || level > kMaxSeverity) {
      bad_rule("bad severity_at_most argument");
    }
    return SeverityAtMost{static_cast<std::uint8_t>(level)};
  }
  bad_rule("unknown predicate '" + std::string(name) + "'");
}

RuleTable load_rules(std::string_view config_text) {
  std::vector<Rule> rules;
  std::optional<Category> fallback;
  std::istringstream in{std::string(config_text)};
  std::string raw;
  while (std::getline(in, raw)) {
    auto line = strip(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto words = split_ws(line);
    if (words[0] == "fallback") {
      if (words.size() != 2) bad_rule("fallback takes one category");
      fallback = parse_category(words[1]);
      if (!fallback) bad_rule("unknown category '" + std::string(words[1]) + "'");
      continue;
    }
    if (words[0] != "rule" || words.size() < 4) bad_rule("expected 'rule <priority> <predicate> <category>'");
    int priority = 0;
    auto [ptr, ec] = std::from_chars(words[1].data(), words[1].data() + words[1].size(), priority);
    if (ec != std::errc{} || ptr != words[1].data() + words[1].size()) bad_rule("bad priority");
    const auto target = parse_category(words.back());
    if (!target) bad_rule("unknown category '" + std::string(words.back()) + "'");
    // The predicate may contain spaces inside its parentheses.
    const auto pred_begin = words[2].data() - line.data();
    const auto pred_end = words.back().data() - line.data();
    rules.push_back({priority, parse_predicate(line.substr(pred_begin, pred_end - pred_begin)), *target});
  }
  if (rules.empty()) {
    auto defaults = default_rules();
    return fallback ? RuleTable(defaults.rules(), *fallback) : defaults;
  }
  return RuleTable(std::move(rules), fallback.value_or(Category::general_info));
}

}  // namespace loghive
