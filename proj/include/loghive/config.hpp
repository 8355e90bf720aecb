#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "loghive/classifier.hpp"
#include "loghive/crypto.hpp"
#include "loghive/scheduler.hpp"
#include "loghive/vault.hpp"

namespace loghive {

using QuotaFractions = std::array<double, kCategoryCount>;

/// 0.30 security, 0.10 general_info, 0.15 for each of the others.
QuotaFractions default_quota_fractions();

/// floor(budget * f) per partition; the remainder goes to security. Throws
/// ConfigInvalid unless the fractions are positive and sum to 1.
QuotaMap quotas_from_fractions(std::uint64_t budget, const QuotaFractions& fractions);

/// Contents of `vault.conf`, a flat `key = value` file. Recognized keys:
///
///   device_id, total_budget, segment_target
///   quota.<category>, threshold.<category>, band.<category>,
///   policy.<category>, daily_rotation.<category>
///   rule.<priority> = <predicate> <category>, fallback = <category>
///   period.<job> = <seconds>
///   sink = none | dir:<path> | tcp:<host>:<port>
///   master_key_file = <path>   or   master_key_env = <variable>
///
/// `#` starts a comment line. Unknown keys are rejected.
struct EngineConfig {
  std::string device_id = "device";
  std::uint64_t total_budget = 6ULL << 20;
  std::uint64_t segment_target = kDefaultSegmentTarget;
  QuotaFractions fractions = default_quota_fractions();
  PartitionConfigs partitions;
  RuleTable rules = default_rules();
  JobPeriods periods = default_job_periods();
  std::string sink = "none";
  std::optional<std::filesystem::path> master_key_file;
  std::optional<std::string> master_key_env;

  EngineConfig();

  /// Recomputes partition quotas from the fractions and checks every
  /// invariant. Throws ConfigInvalid.
  void finalize();

  /// Throws ConfigInvalid (or BadRule for rule lines).
  static EngineConfig parse(std::string_view text);
  static EngineConfig load(const std::filesystem::path& path);
  std::string to_text() const;

  /// Resolves the master key. Relative key-file paths are taken relative to
  /// `base_dir`. Throws ConfigInvalid when no source is configured.
  SecretKey master_key(const std::filesystem::path& base_dir) const;
};

}  // namespace loghive
