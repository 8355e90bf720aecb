#pragma once

#include <array>
#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "loghive/vault.hpp"

namespace loghive {

/// Declaration order is execution order within a tick.
enum class Job { flush_buffers, threshold_scan, retention_sweep, rebalance, daily_rotation, archive_sweep };

inline constexpr std::array<Job, 6> kAllJobs = {Job::flush_buffers, Job::threshold_scan, Job::retention_sweep,
                                                Job::rebalance,     Job::daily_rotation, Job::archive_sweep};

std::string_view to_string(Job job);
std::optional<Job> parse_job(std::string_view name);

using JobPeriods = std::array<std::chrono::microseconds, kAllJobs.size()>;

/// flush 1 s, scan 5 s, retention 30 s, rebalance 60 s, rotation 1 day,
/// archive 60 s.
JobPeriods default_job_periods();

struct JobSpec {
  Job job = Job::flush_buffers;
  std::chrono::microseconds period{};
  std::optional<Timestamp> last_run;
};

struct JobError {
  Job job = Job::flush_buffers;
  std::string message;
};

struct TickResult {
  std::vector<Job> ran;
  std::vector<JobError> errors;
};

/// Drives the background jobs of one vault. Periodic jobs are due once
/// `period` has elapsed since their last run (or since the scheduler's start
/// instant). daily_rotation is due whenever `now` lies in a later
/// period-aligned window than its last run, which for the default one-day
/// period means after each UTC midnight.
class Scheduler {
 public:
  Scheduler(Vault& vault, JobPeriods periods, Timestamp start);

  TickResult tick(Timestamp now);

  const std::array<JobSpec, kAllJobs.size()>& jobs() const { return jobs_; }

 private:
  bool due(const JobSpec& spec, Timestamp now) const;
  void run(Job job, Timestamp now);

  Vault& vault_;
  Timestamp start_;
  std::array<JobSpec, kAllJobs.size()> jobs_;
};

struct StatusRow {
  std::string device_id;
  std::array<ThresholdState, kCategoryCount> cells{};
};

struct StatusMatrix {
  std::vector<StatusRow> rows;
  friend bool operator==(const StatusRow& a, const StatusRow& b) {
    return a.device_id == b.device_id && a.cells == b.cells;
  }
  friend bool operator==(const StatusMatrix&, const StatusMatrix&) = default;
};

struct DeviceVault {
  std::string device_id;
  const Vault* vault = nullptr;
};

/// Recomputes every cell from the vaults' current usage.
StatusMatrix snapshot_matrix(const std::vector<DeviceVault>& devices);

struct RenderOptions {
  bool machine = false;  // tab-separated letters, no header
  bool color = false;    // ANSI green / yellow / red
};

std::string render(const StatusMatrix& matrix, RenderOptions options = {});

}  // namespace loghive
