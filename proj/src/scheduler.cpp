#include "loghive/scheduler.hpp"

#include <algorithm>

#include "loghive/error.hpp"

namespace loghive {

using namespace std::chrono_literals;

std::string_view to_string(Job job) {
  switch (job) {
    case Job::flush_buffers: return "flush_buffers";
    case Job::threshold_scan: return "threshold_scan";
    case Job::retention_sweep: return "retention_sweep";
    case Job::rebalance: return "rebalance";
    case Job::daily_rotation: return "daily_rotation";
    case Job::archive_sweep: return "archive_sweep";
  }
  return "?";
}

std::optional<Job> parse_job(std::string_view name) {
  for (Job j : kAllJobs) {
    if (to_string(j) == name) return j;
  }
  return std::nullopt;
}

JobPeriods default_job_periods() {
  return {std::chrono::microseconds(1s),  std::chrono::microseconds(5s),  std::chrono::microseconds(30s),
          std::chrono::microseconds(60s), std::chrono::microseconds(24h), std::chrono::microseconds(60s)};
}

Scheduler::Scheduler(Vault& vault, JobPeriods periods, Timestamp start) : vault_(vault), start_(start) {
  for (std::size_t i = 0; i < kAllJobs.size(); ++i) {
    if (periods[i] <= 0us) {
      throw Error(ErrorCode::ConfigInvalid, "period of " + std::string(to_string(kAllJobs[i])) + " must be positive");
    }
    jobs_[i] = {kAllJobs[i], periods[i], std::nullopt};
  }
}

bool Scheduler::due(const JobSpec& spec, Timestamp now) const {
  const Timestamp last = spec.last_run.value_or(start_);
  if (spec.job == Job::daily_rotation) {
    auto window = [&](Timestamp t) {
      const auto us = t.time_since_epoch().count();
      const auto p = spec.period.count();
      return us >= 0 ? us / p : (us - p + 1) / p;
    };
    return window(now) > window(last);
  }
  return now - last >= spec.period;
}

void Scheduler::run(Job job, Timestamp now) {
  switch (job) {
    case Job::flush_buffers: vault_.flush(); break;
    case Job::threshold_scan: vault_.scan_thresholds(); break;
    case Job::retention_sweep: {
      // Every partition is attempted even if one fails; the first error is reported.
      std::optional<Error> first;
      for (Category c : kAllCategories) {
        if (vault_.threshold_state(c) != ThresholdState::above) continue;
        try {
          vault_.enforce_retention(c);
        } catch (const Error& e) {
          if (!first) first = e;
        }
      }
      if (first) throw *first;
      break;
    }
    case Job::rebalance: vault_.rebalance(); break;
    case Job::daily_rotation: vault_.rotate_daily(now); break;
    case Job::archive_sweep: vault_.archive_sweep(); break;
  }
}

TickResult Scheduler::tick(Timestamp now) {
  TickResult result;
  for (auto& spec : jobs_) {
    if (!due(spec, now)) continue;
    spec.last_run = now;
    result.ran.push_back(spec.job);
    try {
      run(spec.job, now);
    } catch (const std::exception& e) {
      result.errors.push_back({spec.job, e.what()});
    }
  }
  return result;
}

StatusMatrix snapshot_matrix(const std::vector<DeviceVault>& devices) {
  StatusMatrix m;
  for (const auto& d : devices) {
    StatusRow row{d.device_id, {}};
    for (Category c : kAllCategories) row.cells[slot(c)] = d.vault->threshold_state(c);
    m.rows.push_back(std::move(row));
  }
  return m;
}

std::string render(const StatusMatrix& matrix, RenderOptions options) {
  std::string out;
  std::size_t width = 6;
  for (const auto& r : matrix.rows) width = std::max(width, r.device_id.size());
  if (!options.machine) {
    out += "device" + std::string(width - 6, ' ');
    for (std::size_t k = 1; k <= kCategoryCount; ++k) out += " mem_log" + std::to_string(k);
    out += '\n';
  }
  for (const auto& r : matrix.rows) {
    if (options.machine) {
      out += r.device_id;
      for (auto s : r.cells) {
        out += '\t';
        out += status_letter(s);
      }
      out += '\n';
      continue;
    }
    out += r.device_id + std::string(width - r.device_id.size(), ' ');
    for (auto s : r.cells) {
      out += "        ";
      if (options.color) {
        out += s == ThresholdState::below ? "\x1b[32m" : s == ThresholdState::at ? "\x1b[33m" : "\x1b[31m";
      }
      out += status_letter(s);
      if (options.color) out += "\x1b[0m";
    }
    out += '\n';
  }
  return out;
}

}  // namespace loghive
