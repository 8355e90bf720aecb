#include <doctest.h>

#include <random>

#include "loghive/error.hpp"
#include "loghive/scheduler.hpp"
#include "test_support.hpp"

using namespace loghive;
using namespace std::chrono_literals;

namespace {

struct Device {
  testing::TempDir tmp;
  std::shared_ptr<VirtualClock> clock;
  std::unique_ptr<Vault> vault;

  explicit Device(Timestamp start = testing::ts(0), std::uint64_t budget = 6 * 16 * 1024)
      : clock(std::make_shared<VirtualClock>(start)) {
    VaultOptions opts;
    opts.segment_target = 1024;
    vault = std::make_unique<Vault>(tmp.path(), budget, default_partition_configs(budget),
                                    std::make_shared<KeyRing>(KeyRing::generate(SecretKey::random())), clock, nullptr,
                                    opts);
  }

  void fill(Category c, double fraction) {
    LogRecord r;
    r.timestamp = clock->now();
    r.device_id = "dev";
    r.message = std::string(100, 'f');
    while (vault->usage(c).fraction() < fraction) vault->append(r, c);
  }
};

}  // namespace

TEST_CASE("job names") {
  for (Job j : kAllJobs) CHECK(parse_job(to_string(j)) == j);
  CHECK_FALSE(parse_job("defrag"));
  const auto p = default_job_periods();
  CHECK(p[0] == 1s);
  CHECK(p[1] == 5s);
  CHECK(p[2] == 30s);
  CHECK(p[3] == 60s);
  CHECK(p[4] == 24h);
  CHECK(p[5] == 60s);
}

TEST_CASE("tick examples") {
  Device d;
  const auto start = testing::ts(0);
  Scheduler s(*d.vault, default_job_periods(), start);
  CHECK(s.tick(start).ran.empty());
  CHECK(s.tick(start + 999ms).ran.empty());
  CHECK(s.tick(start + 1s).ran == std::vector<Job>{Job::flush_buffers});
  CHECK(s.tick(start + 1s).ran.empty());
  CHECK(s.tick(start + 5s).ran == std::vector<Job>{Job::flush_buffers, Job::threshold_scan});
  const auto all = s.tick(start + 24h);
  CHECK(all.ran == std::vector<Job>(kAllJobs.begin(), kAllJobs.end()));
  CHECK(all.errors.empty());

  auto zero = default_job_periods();
  zero[2] = 0us;
  CHECK_THROWS_AS(Scheduler(*d.vault, zero, start), Error);
}

TEST_CASE("daily_rotation runs exactly once over a simulated day") {
  for (std::int64_t offset : {0, 3600 * 7 + 13}) {
    CAPTURE(offset);
    Device d(testing::ts(offset));
    Scheduler s(*d.vault, default_job_periods(), d.clock->now());
    std::array<int, kAllJobs.size()> runs{};
    const auto end = d.clock->now() + 24h;
    while (d.clock->now() < end) {
      d.clock->advance(1s);
      for (Job j : s.tick(d.clock->now()).ran) ++runs[static_cast<std::size_t>(j)];
    }
    CHECK(runs[static_cast<std::size_t>(Job::daily_rotation)] == 1);
    CHECK(runs[static_cast<std::size_t>(Job::flush_buffers)] == 86400);
    CHECK(runs[static_cast<std::size_t>(Job::threshold_scan)] == 86400 / 5);
    CHECK(runs[static_cast<std::size_t>(Job::rebalance)] == 86400 / 60);
  }
}

TEST_CASE("no job runs twice within one period under random tick sequences") {
  std::mt19937_64 rng(12);
  Device d;
  JobPeriods periods;
  for (auto& p : periods) p = std::chrono::microseconds(1'000'000 * static_cast<std::int64_t>(1 + rng() % 20));
  periods[static_cast<std::size_t>(Job::daily_rotation)] = 24h;
  Scheduler s(*d.vault, periods, d.clock->now());
  std::array<std::optional<Timestamp>, kAllJobs.size()> last{};
  for (int i = 0; i < 5000; ++i) {
    d.clock->advance(std::chrono::microseconds(rng() % 3'000'000));
    const auto now = d.clock->now();
    const auto ran = s.tick(now).ran;
    // Fixed order within the tick.
    for (std::size_t k = 1; k < ran.size(); ++k) CHECK(static_cast<int>(ran[k - 1]) < static_cast<int>(ran[k]));
    for (Job j : ran) {
      const auto idx = static_cast<std::size_t>(j);
      if (last[idx] && j != Job::daily_rotation) CHECK(now - *last[idx] >= periods[idx]);
      last[idx] = now;
    }
  }
}

TEST_CASE("retention_sweep only touches Above partitions and collects errors") {
  Device d;
  d.fill(Category::security, 0.95);
  d.fill(Category::firewall, 0.82);
  const auto firewall_before = d.vault->usage(Category::firewall).used_bytes;
  JobPeriods periods = default_job_periods();
  Scheduler s(*d.vault, periods, d.clock->now());
  const auto r = s.tick(d.clock->now() + 30s);
  CHECK(std::find(r.ran.begin(), r.ran.end(), Job::retention_sweep) != r.ran.end());
  CHECK(r.errors.empty());
  CHECK(d.vault->threshold_state(Category::security) == ThresholdState::below);
  CHECK(d.vault->usage(Category::firewall).used_bytes == firewall_before);
}

TEST_CASE("job errors are reported and do not abort the tick") {
  testing::TempDir tmp;
  const std::uint64_t budget = 6 * 16 * 1024;
  auto configs = default_partition_configs(budget);
  configs[slot(Category::security)].policy = RetentionPolicy::archive_then_delete;
  auto clock = std::make_shared<VirtualClock>(testing::ts(0));
  VaultOptions opts;
  opts.segment_target = 1024;
  Vault v(tmp.path(), budget, configs, std::make_shared<KeyRing>(KeyRing::generate(SecretKey::random())), clock,
          nullptr, opts);
  LogRecord r;
  r.device_id = "dev";
  r.message = std::string(100, 'z');
  while (v.usage(Category::security).fraction() < 0.9) v.append(r, Category::security);
  Scheduler s(v, default_job_periods(), clock->now());
  const auto result = s.tick(clock->now() + 24h);
  CHECK(result.ran.size() == kAllJobs.size());
  REQUIRE(result.errors.size() >= 1);
  CHECK(result.errors[0].job == Job::retention_sweep);
  CHECK(result.errors[0].message.find("ArchiveSinkFailure") != std::string::npos);
}

TEST_CASE("status matrix") {
  Device a, b;
  SUBCASE("fresh devices are all Below") {
    const auto m = snapshot_matrix({{"a", a.vault.get()}, {"b", b.vault.get()}});
    REQUIRE(m.rows.size() == 2);
    for (const auto& row : m.rows) {
      for (auto c : row.cells) CHECK(c == ThresholdState::below);
    }
    CHECK(render(m) ==
          "device mem_log1 mem_log2 mem_log3 mem_log4 mem_log5 mem_log6\n"
          "a             B        B        B        B        B        B\n"
          "b             B        B        B        B        B        B\n");
  }
  SUBCASE("partition 1 at 0.95 is Above") {
    a.fill(Category::security, 0.95);
    a.fill(Category::firewall, 0.8);
    const auto m = snapshot_matrix({{"dev-1", a.vault.get()}});
    CHECK(m.rows[0].cells[0] == ThresholdState::above);
    CHECK(m.rows[0].cells[4] == ThresholdState::at);
    CHECK(render(m, {.machine = true}) == "dev-1\tO\tB\tB\tB\tA\tB\n");
    const auto colored = render(m, {.color = true});
    CHECK(colored.find("\x1b[31mO\x1b[0m") != std::string::npos);
    CHECK(colored.find("\x1b[33mA\x1b[0m") != std::string::npos);
  }
  SUBCASE("cells are recomputed on every snapshot") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
      const auto c = kAllCategories[rng() % 6];
      if (rng() % 4 == 0) {
        a.vault->enforce_retention(c);
      } else {
        LogRecord r;
        r.device_id = "dev";
        r.message = std::string(50 + rng() % 900, 'r');
        for (int k = 0; k < 5; ++k) a.vault->append(r, c);
      }
      const auto m = snapshot_matrix({{"a", a.vault.get()}});
      for (Category cat : kAllCategories) {
        const auto u = a.vault->usage(cat);
        CHECK(m.rows[0].cells[slot(cat)] == derive_threshold_state(u.used_bytes, u.quota_bytes, u.threshold, u.band));
      }
    }
  }
}

TEST_CASE("event count between snapshots equals state changes in the usage trace") {
  Device d;
  auto sub = d.vault->subscribe_events();
  std::mt19937_64 rng(21);
  auto before = snapshot_matrix({{"d", d.vault.get()}});
  int trace_changes = 0;
  for (int i = 0; i < 400; ++i) {
    const auto c = kAllCategories[rng() % 6];
    const auto prev = d.vault->threshold_state(c);
    if (rng() % 8 == 0) {
      d.vault->enforce_retention(c);
    } else {
      LogRecord r;
      r.device_id = "dev";
      r.message = std::string(100 + rng() % 400, 'e');
      d.vault->append(r, c);
    }
    trace_changes += d.vault->threshold_state(c) != prev;
  }
  const auto after = snapshot_matrix({{"d", d.vault.get()}});
  const auto events = sub->drain();
  CHECK(static_cast<int>(events.size()) == trace_changes);
  std::array<ThresholdState, kCategoryCount> replay = before.rows[0].cells;
  for (const auto& e : events) replay[slot(e.partition)] = e.to;
  CHECK(replay == after.rows[0].cells);
}
