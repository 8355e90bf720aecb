#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "loghive/record.hpp"

namespace loghive {

struct HasFlag {
  Flags any;  // matches when the record carries at least one of these
  friend bool operator==(const HasFlag&, const HasFlag&) = default;
};
struct MessageContains {
  std::string token;  // stored lowercase; matching is ASCII case-insensitive
  friend bool operator==(const MessageContains&, const MessageContains&) = default;
};
struct SeverityAtMost {
  std::uint8_t level = kMaxSeverity;
  friend bool operator==(const SeverityAtMost&, const SeverityAtMost&) = default;
};
struct PeerPresent {
  friend bool operator==(const PeerPresent&, const PeerPresent&) = default;
};

using Predicate = std::variant<HasFlag, MessageContains, SeverityAtMost, PeerPresent>;

bool matches(const Predicate& predicate, const LogRecord& record);
std::string format_predicate(const Predicate& predicate);

struct Rule {
  int priority = 0;
  Predicate predicate;
  Category target = Category::general_info;
  friend bool operator==(const Rule&, const Rule&) = default;
};

/// Ordered first-match rule table. Construction sorts by priority and
/// rejects duplicates, so a RuleTable is always valid.
class RuleTable {
 public:
  explicit RuleTable(std::vector<Rule> rules, Category fallback = Category::general_info);

  const std::vector<Rule>& rules() const { return rules_; }
  Category fallback() const { return fallback_; }

  friend bool operator==(const RuleTable&, const RuleTable&) = default;

 private:
  std::vector<Rule> rules_;
  Category fallback_;
};

/// Explicit tag wins; otherwise the lowest-priority matching rule; otherwise
/// the fallback.
Category classify(const LogRecord& record, const RuleTable& rules);

RuleTable default_rules();

/// Parses `rule <priority> <predicate> <category>` lines plus an optional
/// `fallback <category>` line. Blank lines and `#` comments are skipped. With
/// no rule lines the default table is returned. Throws Error(BadRule).
RuleTable load_rules(std::string_view config_text);

Predicate parse_predicate(std::string_view text);

/// Holder that lets a rule reload replace the table while classifications
/// in flight keep using the snapshot they started with.
class RuleSet {
 public:
  explicit RuleSet(RuleTable table) : table_(std::make_shared<const RuleTable>(std::move(table))) {}

  std::shared_ptr<const RuleTable> snapshot() const {
    std::lock_guard lock(mu_);
    return table_;
  }
  void replace(RuleTable table) {
    auto next = std::make_shared<const RuleTable>(std::move(table));
    std::lock_guard lock(mu_);
    table_ = std::move(next);
  }
  Category classify(const LogRecord& record) const { return loghive::classify(record, *snapshot()); }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const RuleTable> table_;
};

}  // namespace loghive
