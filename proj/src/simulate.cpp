#include "loghive/simulate.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <cstdlib>
#include <random>
#include <set>
#include <sstream>

#include "fsutil.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/engine.hpp"
#include "loghive/error.hpp"

namespace loghive {
namespace {

namespace fs = std::filesystem;

[[noreturn]] void spec_invalid(const std::string& why) { throw Error(ErrorCode::SpecInvalid, why); }

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) spec_invalid(std::string(key) + ": expected an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) {
    spec_invalid(std::string(key) + ": expected a number");
  }
  return out;
}

// The raw mt19937_64 stream is specified by the standard; the distributions
// in <random> are not, so they are built here to keep reports portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t device_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Neutral vocabulary: nothing here matches a classifier token.
constexpr std::array<std::string_view, 24> kWords = {
    "sensor", "reading", "uptime",  "battery", "link",   "packet", "queue",  "service",
    "status", "ok",      "cycle",   "report",  "value",  "sample", "thread", "memory",
    "cache",  "timer",   "request", "reply",   "worker", "module", "event",  "handler"};

std::string make_message(Rng& rng, std::size_t len, std::string_view lead) {
  std::string m(lead);
  while (m.size() < len) {
    if (!m.empty()) m += ' ';
    m += kWords[rng.below(kWords.size())];
    m += '=';
    m += std::to_string(rng.below(100000));
  }
  m.resize(len);
  while (!m.empty() && m.back() == ' ') m.back() = '_';
  return m;
}

class DeviceSim {
 public:
  DeviceSim(const WorkloadSpec& spec, const DeviceWorkload& dw, std::size_t index, std::shared_ptr<VirtualClock> clock,
            const fs::path& dir)
      : spec_(spec), dw_(dw), rng_(device_seed(spec.seed, index)), clock_(std::move(clock)) {
    EngineConfig cfg;
    cfg.device_id = dw.id;
    cfg.total_budget = spec.total_budget;
    cfg.segment_target = spec.segment_target;
    cfg.periods = spec.periods;
    EngineOptions opts;
    opts.clock = clock_;
    engine_ = std::make_unique<Engine>(dir, cfg, SecretKey::random(), opts);
    events_ = engine_->vault().subscribe_events(1 << 16);
    counters_.device_id = dw.id;
  }

  void step(Timestamp second) {
    std::int64_t offset = 0;
    for (Category c : kAllCategories) {
      const double rate = dw_.rates[slot(c)];
      const auto whole = static_cast<std::uint64_t>(std::floor(rate));
      const auto n = whole + (rng_.bernoulli(rate - static_cast<double>(whole)) ? 1 : 0);
      for (std::uint64_t i = 0; i < n; ++i) {
        auto record = generate(c, second + std::chrono::microseconds(offset++));
        ++counters_.events;
        try {
          engine_->ingest(record);
        } catch (const Error&) {
          ++counters_.rejected;
        }
      }
    }
  }

  void tick() {
    const auto r = engine_->tick();
    counters_.job_errors += r.errors.size();
    counters_.threshold_events += events_->drain().size();
  }

  DeviceCounters finish() {
    counters_.threshold_events += events_->drain().size();
    counters_.vault = engine_->vault().counters();
    return counters_;
  }

  Engine& engine() { return *engine_; }

 private:
  std::size_t message_length() {
    return spec_.message_min + rng_.below(spec_.message_max - spec_.message_min + 1);
  }

  LogRecord generate(Category c, Timestamp ts) {
    LogRecord r;
    r.timestamp = ts;
    r.device_id = dw_.id;
    r.severity = static_cast<std::uint8_t>(rng_.below(kMaxSeverity + 1));
    switch (c) {
      case Category::security: {
        const auto peer = rng_.below(spec_.peers);
        r.peer_id = "peer-" + std::to_string(peer + 1);
        const bool spammer = peer < spec_.spammers;
        if (spammer && rng_.bernoulli(dw_.spam_ratio)) {
          r.flags.set(kAllFlags[rng_.below(3)]);
        } else {
          r.category = Category::security;
        }
        auto& last = last_message_[peer];
        if (spammer && !last.empty() && rng_.bernoulli(dw_.duplicate_ratio)) {
          r.message = last;
        } else {
          r.message = make_message(rng_, message_length(), "");
          last = r.message;
        }
        return r;
      }
      case Category::authentication:
        r.flags.set(rng_.bernoulli(0.5) ? Flag::login_success : Flag::login_failure);
        r.message = make_message(rng_, message_length(), "session");
        return r;
      case Category::configuration:
        r.message = make_message(rng_, message_length(), "config");
        return r;
      case Category::firewall:
        r.message = make_message(rng_, message_length(), "firewall");
        return r;
      case Category::device_management:
        r.peer_id = "node-" + std::to_string(rng_.below(16) + 1);
        r.message = make_message(rng_, message_length(), "attach");
        return r;
      case Category::general_info:
        r.message = make_message(rng_, message_length(), "");
        return r;
    }
    return r;
  }

  const WorkloadSpec& spec_;
  const DeviceWorkload& dw_;
  Rng rng_;
  std::shared_ptr<VirtualClock> clock_;
  std::unique_ptr<Engine> engine_;
  std::shared_ptr<EventSubscription> events_;
  DeviceCounters counters_;
  std::map<std::uint64_t, std::string> last_message_;
};

}  // namespace

WorkloadSpec WorkloadSpec::parse(std::string_view text) {
  WorkloadSpec spec;
  std::size_t device_count = 0;
  bool have_devices = false;
  std::array<double, kCategoryCount> default_rates{};
  double default_spam = 0.0;
  double default_dup = 0.0;
  struct Override {
    std::string key;
    std::string value;
  };
  std::vector<Override> per_device;
  std::set<std::string, std::less<>> seen;

  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    const auto line = strip(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) spec_invalid("expected key = value: " + std::string(line));
    const auto key = strip(line.substr(0, eq));
    const auto value = strip(line.substr(eq + 1));
    if (!seen.emplace(key).second) spec_invalid("duplicate key " + std::string(key));

    if (key == "seed") {
      spec.seed = parse_int<std::uint64_t>(key, value);
    } else if (key == "duration") {
      spec.duration_s = parse_int<std::int64_t>(key, value);
    } else if (key == "devices") {
      device_count = parse_int<std::size_t>(key, value);
      have_devices = true;
    } else if (key == "total_budget") {
      spec.total_budget = parse_int<std::uint64_t>(key, value);
    } else if (key == "segment_target") {
      spec.segment_target = parse_int<std::uint64_t>(key, value);
    } else if (key == "message_min") {
      spec.message_min = parse_int<std::size_t>(key, value);
    } else if (key == "message_max") {
      spec.message_max = parse_int<std::size_t>(key, value);
    } else if (key == "peers") {
      spec.peers = parse_int<std::size_t>(key, value);
    } else if (key == "spammers") {
      spec.spammers = parse_int<std::size_t>(key, value);
    } else if (key == "spam_ratio") {
      default_spam = parse_real(key, value);
    } else if (key == "duplicate_ratio") {
      default_dup = parse_real(key, value);
    } else if (key.starts_with("rate.")) {
      const auto c = parse_category(key.substr(5));
      if (!c) spec_invalid("unknown category in " + std::string(key));
      default_rates[slot(*c)] = parse_real(key, value);
    } else if (key.starts_with("period.")) {
      const auto job = parse_job(key.substr(7));
      if (!job) spec_invalid("unknown job in " + std::string(key));
      const double seconds = parse_real(key, value);
      if (!(seconds > 0.0)) spec_invalid(std::string(key) + ": period must be positive");
      spec.periods[static_cast<std::size_t>(*job)] =
          std::chrono::microseconds(static_cast<std::int64_t>(std::llround(seconds * 1e6)));
    } else if (key.starts_with("device.")) {
      per_device.push_back({std::string(key), std::string(value)});
    } else {
      spec_invalid("unknown key " + std::string(key));
    }
  }
  if (!have_devices) spec_invalid("devices is required");

  for (std::size_t i = 0; i < device_count; ++i) {
    spec.devices.push_back({"dev-" + std::to_string(i + 1), default_rates, default_spam, default_dup});
  }
  for (const auto& o : per_device) {
    std::string_view rest = std::string_view(o.key).substr(7);
    const auto dot = rest.find('.');
    if (dot == std::string_view::npos) spec_invalid("malformed key " + o.key);
    const auto index = parse_int<std::size_t>(o.key, rest.substr(0, dot));
    if (index < 1 || index > device_count) spec_invalid("device index out of range in " + o.key);
    auto& d = spec.devices[index - 1];
    const auto field = rest.substr(dot + 1);
    if (field == "id") {
      d.id = o.value;
    } else if (field == "spam_ratio") {
      d.spam_ratio = parse_real(o.key, o.value);
    } else if (field == "duplicate_ratio") {
      d.duplicate_ratio = parse_real(o.key, o.value);
    } else if (field.starts_with("rate.")) {
      const auto c = parse_category(field.substr(5));
      if (!c) spec_invalid("unknown category in " + o.key);
      d.rates[slot(*c)] = parse_real(o.key, o.value);
    } else {
      spec_invalid("unknown key " + o.key);
    }
  }
  spec.validate();
  return spec;
}

WorkloadSpec WorkloadSpec::load(const fs::path& path) {
  std::vector<std::byte> bytes;
  try {
    bytes = fsutil::read_file(path);
  } catch (const Error&) {
    spec_invalid("cannot read " + path.string());
  }
  return parse(detail::as_chars(bytes));
}

void WorkloadSpec::validate() const {
  if (devices.empty()) spec_invalid("at least one device is required");
  if (duration_s < 0) spec_invalid("duration must be non-negative");
  if (message_min == 0 || message_min > message_max || message_max > kMaxMessageBytes) {
    spec_invalid("need 0 < message_min <= message_max <= 65536");
  }
  if (peers == 0 || spammers > peers) spec_invalid("need peers > 0 and spammers <= peers");
  std::set<std::string> ids;
  for (const auto& d : devices) {
    if (!ids.insert(d.id).second) spec_invalid("duplicate device id " + d.id);
    if (d.id.empty() || d.id.find_first_of(" \t\"/") != std::string::npos) spec_invalid("bad device id " + d.id);
    for (double r : d.rates) {
      if (!(r >= 0.0)) spec_invalid("rates must be non-negative");
    }
    if (!(d.spam_ratio >= 0.0 && d.spam_ratio <= 1.0) || !(d.duplicate_ratio >= 0.0 && d.duplicate_ratio <= 1.0)) {
      spec_invalid("ratios must lie in [0, 1]");
    }
  }
  for (auto p : periods) {
    if (p.count() <= 0) spec_invalid("periods must be positive");
  }
  try {
    validate_partition_configs(total_budget, [&] {
      EngineConfig cfg;
      cfg.total_budget = total_budget;
      cfg.segment_target = segment_target;
      const auto q = quotas_from_fractions(total_budget, cfg.fractions);
      for (std::size_t i = 0; i < kCategoryCount; ++i) cfg.partitions[i].quota_bytes = q[i];
      return cfg.partitions;
    }(), segment_target);
  } catch (const Error& e) {
    spec_invalid(e.what());
  }
}

SimulationReport simulate(const WorkloadSpec& spec, const fs::path& workdir) {
  spec.validate();
  fs::create_directories(workdir);
  if (!fs::is_empty(workdir)) spec_invalid(workdir.string() + " is not empty");

  // 2024-01-01T00:00:00Z
  const Timestamp start{std::chrono::microseconds{1'704'067'200'000'000LL}};
  std::vector<std::shared_ptr<VirtualClock>> clocks;
  std::vector<std::unique_ptr<DeviceSim>> sims;
  for (std::size_t i = 0; i < spec.devices.size(); ++i) {
    clocks.push_back(std::make_shared<VirtualClock>(start));
    sims.push_back(
        std::make_unique<DeviceSim>(spec, spec.devices[i], i, clocks.back(), workdir / spec.devices[i].id));
  }

  for (std::int64_t s = 0; s < spec.duration_s; ++s) {
    const Timestamp second = start + std::chrono::seconds(s);
    for (std::size_t i = 0; i < sims.size(); ++i) {
      clocks[i]->set(second);
      sims[i]->step(second);
      clocks[i]->set(second + std::chrono::seconds(1));
      sims[i]->tick();
    }
  }

  SimulationReport report;
  std::vector<DeviceVault> devices;
  for (std::size_t i = 0; i < sims.size(); ++i) devices.push_back({spec.devices[i].id, &sims[i]->engine().vault()});
  report.matrix = snapshot_matrix(devices);
  const Timestamp end = start + std::chrono::seconds(spec.duration_s);
  for (std::size_t i = 0; i < sims.size(); ++i) {
    report.usage.emplace_back(spec.devices[i].id, sims[i]->engine().vault().usages());
    report.reputation.emplace_back(spec.devices[i].id, sims[i]->engine().reputation().report(end));
    report.counters.push_back(sims[i]->finish());
  }
  return report;
}

std::string SimulationReport::to_text() const {
  std::ostringstream out;
  out << "status\n" << render(matrix);
  out << "usage\n";
  for (const auto& [device, parts] : usage) {
    out << device;
    for (const auto& p : parts) {
      char buf[32];
      std::snprintf(buf, sizeof buf, " %.3f", p.fraction());
      out << buf;
    }
    out << '\n';
  }
  out << "reputation\n";
  for (const auto& [device, scores] : reputation) {
    for (const auto& s : scores) out << device << ' ' << format_score_line(s) << '\n';
  }
  out << "counters\n";
  for (const auto& c : counters) {
    out << c.device_id << " events=" << c.events << " rejected=" << c.rejected << " appends=" << c.vault.appends
        << " seals=" << c.vault.seals << " evictions=" << c.vault.evictions << " archived=" << c.vault.archived
        << " rebalances=" << c.vault.rebalances << " threshold_events=" << c.threshold_events
        << " job_errors=" << c.job_errors << '\n';
  }
  return out.str();
}

}  // namespace loghive
