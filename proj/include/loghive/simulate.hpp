#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "loghive/reputation.hpp"
#include "loghive/scheduler.hpp"

namespace loghive {

struct DeviceWorkload {
  std::string id;
  std::array<double, kCategoryCount> rates{};  // events per virtual second
  double spam_ratio = 0.0;
  double duplicate_ratio = 0.0;
};

/// Workload description in the same flat `key = value` style as vault.conf:
///
///   seed, duration (virtual seconds), devices (count)
///   total_budget, segment_target, message_min, message_max
///   peers, spammers              security peers; the first `spammers` of
///                                them send flagged traffic
///   spam_ratio, duplicate_ratio  defaults for every device
///   rate.<category>              default rate for every device
///   device.<i>.id | .spam_ratio | .duplicate_ratio | .rate.<category>
///   period.<job>                 scheduler periods in seconds
///
/// Devices are numbered from 1. Throws Error(SpecInvalid).
struct WorkloadSpec {
  std::uint64_t seed = 1;
  std::int64_t duration_s = 60;
  std::uint64_t total_budget = 1ULL << 20;
  std::uint64_t segment_target = 4096;
  std::size_t message_min = 64;
  std::size_t message_max = 256;
  std::size_t peers = 4;
  std::size_t spammers = 1;
  JobPeriods periods = default_job_periods();
  std::vector<DeviceWorkload> devices;

  static WorkloadSpec parse(std::string_view text);
  static WorkloadSpec load(const std::filesystem::path& path);
  void validate() const;
};

struct DeviceCounters {
  std::string device_id;
  std::uint64_t events = 0;
  std::uint64_t rejected = 0;
  std::uint64_t threshold_events = 0;
  std::uint64_t job_errors = 0;
  VaultCounters vault;
};

struct SimulationReport {
  StatusMatrix matrix;
  std::vector<std::pair<std::string, std::array<PartitionUsage, kCategoryCount>>> usage;
  std::vector<std::pair<std::string, std::vector<ReputationScore>>> reputation;
  std::vector<DeviceCounters> counters;

  /// Deterministic text rendering; identical for identical specs.
  std::string to_text() const;
};

/// Runs one engine per device under a virtual clock starting at
/// 2024-01-01T00:00:00Z. Device state lives in `workdir/<device id>`, which
/// must not exist yet or be empty.
SimulationReport simulate(const WorkloadSpec& spec, const std::filesystem::path& workdir);

}  // namespace loghive
