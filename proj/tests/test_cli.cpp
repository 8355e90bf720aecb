#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "loghive/cli.hpp"
#include "loghive/config.hpp"
#include "loghive/error.hpp"
#include "loghive/simulate.hpp"
#include "test_support.hpp"

using namespace loghive;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string line(int i, const std::string& extra = "", std::size_t pad = 0) {
  return "ts=" + format_rfc3339(testing::ts(i)) + " dev=d1 " + extra +
         "msg=\"m" + std::to_string(i) + std::string(pad, 'x') + "\"";
}

fs::path source_dir() { return fs::path(LOGHIVE_SOURCE_DIR); }

}  // namespace

TEST_CASE("init then status shows six Below cells") {
  testing::TempDir tmp;
  const auto dir = (tmp / "v").string();
  const auto init = cli({"init", dir, "--device-id", "gw-7"});
  REQUIRE(init.code == 0);
  CHECK(fs::exists(tmp / "v" / "vault.conf"));
  CHECK(fs::exists(tmp / "v" / "keyring.iotk"));
  CHECK(fs::exists(tmp / "v" / "master.key"));
  CHECK((fs::status(tmp / "v" / "master.key").permissions() & fs::perms::group_all) == fs::perms::none);
  const auto status = cli({"status", dir, "--machine"});
  CHECK(status.code == 0);
  CHECK(status.out == "gw-7\tB\tB\tB\tB\tB\tB\n");
  const auto human = cli({"status", dir});
  CHECK(human.out.rfind("device mem_log1", 0) == 0);
  CHECK(cli({"init", dir}).code == 1);  // already initialized
}

TEST_CASE("ingest then query echoes the records") {
  testing::TempDir tmp;
  const auto dir = (tmp / "v").string();
  REQUIRE(cli({"init", dir}).code == 0);
  const std::string input = line(1, "sev=6 ") + "\n" + line(2, "sev=6 ") + "\n" + line(3, "sev=6 ") + "\n";
  const auto ing = cli({"ingest", dir}, input);
  CHECK(ing.code == 0);
  CHECK(ing.out == "ingested 3 malformed 0 rejected 0\n");
  const auto q = cli({"query", dir, "general_info"});
  CHECK(q.code == 0);
  CHECK(q.out == input);
  CHECK(cli({"query", dir, "general_info", "--limit", "1"}).out == line(1, "sev=6 ") + "\n");
  CHECK(cli({"query", dir, "general_info", "--from", "2024-01-01T00:00:02Z", "--to", "2024-01-01T00:00:02Z"}).out ==
        line(2, "sev=6 ") + "\n");
  CHECK(cli({"query", dir, "security"}).out.empty());
}

TEST_CASE("ingest to query preserves message bytes for printable and escaped input") {
  testing::TempDir tmp;
  const auto dir = (tmp / "v").string();
  REQUIRE(cli({"init", dir}).code == 0);
  std::mt19937_64 rng(17);
  std::vector<LogRecord> records;
  std::string input;
  for (int i = 0; i < 300; ++i) {
    auto r = testing::random_record(rng, 1, 200);
    r.category = Category::configuration;
    records.push_back(r);
    input += format_ingest_line(r) + "\n";
  }
  REQUIRE(cli({"ingest", dir}, input).code == 0);
  const auto q = cli({"query", dir, "configuration"});
  REQUIRE(q.code == 0);
  std::istringstream lines(q.out);
  std::string l;
  std::size_t i = 0;
  while (std::getline(lines, l)) {
    REQUIRE(i < records.size());
    CHECK(parse_ingest_line(l).message == records[i].message);
    CHECK(parse_ingest_line(l) == records[i]);
    ++i;
  }
  CHECK(i == records.size());
}

TEST_CASE("status --machine after driving partition 1 Above") {
  testing::TempDir tmp;
  const auto dir = (tmp / "v").string();
  REQUIRE(cli({"init", dir, "--budget", "1000000"}).code == 0);
  std::string input;
  // security quota 300000; 1250 records of 221 bytes plus four segment overheads is u ~ 0.921.
  for (int i = 0; i < 1250; ++i) input += line(i, "flags=spam ", 200 - 1 - std::to_string(i).size()) + "\n";
  REQUIRE(cli({"ingest", dir}, input).code == 0);
  const auto s = cli({"status", dir, "--machine"});
  CHECK(s.code == 0);
  CHECK(s.out == "device\tO\tB\tB\tB\tB\tB\n");
}

TEST_CASE("exit codes") {
  testing::TempDir tmp;
  const auto dir = (tmp / "v").string();
  REQUIRE(cli({"init", dir, "--budget", "1000000"}).code == 0);
  REQUIRE(cli({"ingest", dir}, line(1, "cat=security peer=p1 flags=spam ") + "\n" + line(2, "peer=p2 ") + "\n").code ==
          0);

  struct Case {
    const char* name;
    std::vector<std::string> args;
    std::string input;
    int expected;
  };
  const std::vector<Case> cases = {
      {"no command", {}, "", 1},
      {"unknown command", {"frobnicate"}, "", 1},
      {"missing argument", {"query", dir}, "", 1},
      {"unknown category", {"query", dir, "kernel"}, "", 1},
      {"bad time bound", {"query", dir, "security", "--from", "yesterday"}, "", 1},
      {"missing vault", {"status", (tmp / "nope").string()}, "", 1},
      {"all lines malformed", {"ingest", dir}, "garbage\nts=x dev=d msg=\"y\"\n", 1},
      {"some lines malformed", {"ingest", dir}, "garbage\n" + line(5) + "\n", 0},
      {"oversized record rejected", {"ingest", dir}, line(6, "cat=general_info ", 70000) + "\n", 1},
      {"rep", {"rep", dir}, "", 0},
      {"rotate one", {"rotate-keys", dir, "firewall"}, "", 0},
      {"rotate alias", {"rotate_keys", dir}, "", 0},
      {"rotate bad category", {"rotate-keys", dir, "kernel"}, "", 1},
      {"verify without sink", {"verify-archive", dir}, "", 1},
      {"simulate missing file", {"simulate", (tmp / "none.workload").string()}, "", 1},
      {"archive-serve bad address", {"archive-serve", "nohostport", (tmp / "srv").string()}, "", 1},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto r = cli(c.args, c.input);
    CHECK(r.code == c.expected);
    if (c.expected != 0) CHECK(!r.err.empty());
  }

  SUBCASE("rep lists peers worst first") {
    const auto r = cli({"rep", dir});
    CHECK(r.out == "p1 5 1.000 0.000 0.000\n");
  }
  SUBCASE("a tampered segment is an integrity error") {
    std::string input;
    for (int i = 0; i < 400; ++i) input += line(i, "cat=firewall ", 300) + "\n";
    REQUIRE(cli({"ingest", dir}, input).code == 0);
    fs::path seg;
    for (const auto& e : fs::directory_iterator(tmp / "v" / "p5")) {
      if (e.path().extension() == ".iotl") seg = e.path();
    }
    REQUIRE(!seg.empty());
    auto bytes = testing::read_all(seg);
    bytes[bytes.size() / 2] ^= std::byte{0x40};
    testing::write_all(seg, bytes);
    const auto r = cli({"query", dir, "firewall"});
    CHECK(r.code == 2);
    CHECK(r.err.find("quarantined") != std::string::npos);
    // The damaged file was moved aside on that open; later commands see a clean vault.
    CHECK(fs::exists(tmp / "v" / "p5" / "quarantine" / seg.filename()));
    CHECK(cli({"status", dir}).code == 0);
  }
  SUBCASE("a wrong master key is an integrity error") {
    write_text(tmp / "v" / "master.key", std::string(64, 'a') + "\n");
    const auto r = cli({"status", dir});
    CHECK(r.code == 2);
    CHECK(r.err.find("AuthFailure") != std::string::npos);
  }
  SUBCASE("a damaged key ring is an integrity error") {
    write_text(tmp / "v" / "keyring.iotk", "junk");
    CHECK(cli({"status", dir}).code == 2);
  }
}

TEST_CASE("master key from the environment") {
  testing::TempDir tmp;
  const std::string key(64, 'c');
  ::setenv("LOGHIVE_TEST_MASTER", key.c_str(), 1);
  write_text(tmp / "conf", "device_id = envdev\ntotal_budget = 1000000\nmaster_key_env = LOGHIVE_TEST_MASTER\n");
  const auto dir = (tmp / "v").string();
  REQUIRE(cli({"init", dir, "--config", (tmp / "conf").string()}).code == 0);
  CHECK_FALSE(fs::exists(tmp / "v" / "master.key"));
  CHECK(cli({"status", dir, "--machine"}).out == "envdev\tB\tB\tB\tB\tB\tB\n");
  ::unsetenv("LOGHIVE_TEST_MASTER");
  CHECK(cli({"status", dir}).code == 1);
}

TEST_CASE("verify-archive") {
  testing::TempDir tmp;
  const auto dir = (tmp / "v").string();
  write_text(tmp / "conf",
             "total_budget = 1000000\npolicy.firewall = archive_then_delete\nsink = dir:" + (tmp / "sink").string() +
                 "\n");
  REQUIRE(cli({"init", dir, "--config", (tmp / "conf").string()}).code == 0);
  std::string input;
  for (int i = 0; i < 600; ++i) input += line(i, "cat=firewall ", 300) + "\n";
  REQUIRE(cli({"ingest", dir}, input).code == 0);
  const auto ok = cli({"verify-archive", dir});
  CHECK(ok.code == 0);
  REQUIRE(ok.out.rfind("ok ", 0) == 0);
  CHECK(ok.out != "ok 0 entries\n");
  for (const auto& e : fs::directory_iterator(tmp / "sink")) {
    auto bytes = testing::read_all(e.path());
    bytes[0] ^= std::byte{1};
    testing::write_all(e.path(), bytes);
    break;
  }
  const auto bad = cli({"verify-archive", dir, "--sink-dir", (tmp / "sink").string()});
  CHECK(bad.code == 2);
  CHECK(bad.out.find("digest_mismatch ") == 0);
}

TEST_CASE("config text") {
  const auto c = EngineConfig::parse(
      "# comment\n"
      "device_id = gw\n"
      "total_budget = 1000000\n"
      "quota.security = 0.5\nquota.authentication = 0.1\nquota.general_info = 0.1\n"
      "quota.configuration = 0.1\nquota.firewall = 0.1\nquota.device_management = 0.1\n"
      "threshold.firewall = 0.7\nband.firewall = 0.1\npolicy.security = archive_then_delete\n"
      "rule.1 = message_contains(ssh) authentication\n"
      "period.rebalance = 120\n"
      "sink = dir:/tmp/a\n"
      "master_key_file = k.hex\n");
  CHECK(c.device_id == "gw");
  CHECK(c.partitions[0].quota_bytes == 500000);
  CHECK(c.partitions[1].quota_bytes == 100000);
  CHECK(c.partitions[4].threshold == 0.7);
  CHECK(c.partitions[4].band == 0.1);
  CHECK(c.partitions[0].policy == RetentionPolicy::archive_then_delete);
  CHECK(c.rules.rules().size() == 1);
  CHECK(c.periods[static_cast<std::size_t>(Job::rebalance)] == std::chrono::seconds(120));
  CHECK(EngineConfig::parse(c.to_text()).to_text() == c.to_text());

  std::uint64_t sum = 0;
  for (auto q : quotas_from_fractions(1'000'003, default_quota_fractions())) sum += q;
  CHECK(sum == 1'000'003);

  const std::pair<std::string, ErrorCode> bad_cases[] = {
      {"colour = red\n", ErrorCode::ConfigInvalid},
      {"total_budget = 10\ntotal_budget = 20\n", ErrorCode::ConfigInvalid},
      {"quota.security = 0.9\n", ErrorCode::ConfigInvalid},
      {"threshold.firewall = 1.5\n", ErrorCode::ConfigInvalid},
      {"policy.firewall = shred\n", ErrorCode::ConfigInvalid},
      {"rule.1 = regex(x) security\n", ErrorCode::BadRule},
      {"period.defrag = 5\n", ErrorCode::ConfigInvalid},
      {"sink = ftp:x\n", ErrorCode::ConfigInvalid},
      {"total_budget = lots\n", ErrorCode::ConfigInvalid},
      {"no equals sign\n", ErrorCode::ConfigInvalid},
  };
  for (const auto& [text, code] : bad_cases) {
    CAPTURE(text);
    try {
      EngineConfig::parse(text);
      FAIL("accepted");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  }
}

TEST_CASE("simulate") {
  testing::TempDir tmp;
  SUBCASE("zero rates give an all-Below matrix and zero counters") {
    write_text(tmp / "w", "seed = 3\nduration = 120\ndevices = 2\n");
    const auto r = cli({"simulate", (tmp / "w").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("dev-1         B        B        B        B        B        B\n") != std::string::npos);
    CHECK(r.out.find("dev-2         B        B        B        B        B        B\n") != std::string::npos);
    const auto spec = WorkloadSpec::load(tmp / "w");
    const auto report = simulate(spec, tmp / "work");
    for (const auto& c : report.counters) {
      CHECK(c.events == 0);
      CHECK(c.vault.appends == 0);
      CHECK(c.vault.evictions == 0);
      CHECK(c.vault.archived == 0);
      CHECK(c.vault.rebalances == 0);
    }
  }
  SUBCASE("same seed, same bytes; different seed, different bytes") {
    write_text(tmp / "w",
               "seed = 11\nduration = 300\ndevices = 2\ntotal_budget = 262144\nsegment_target = 2048\n"
               "rate.security = 1.5\nrate.firewall = 2\nrate.general_info = 0.5\nspammers = 1\n");
    const auto a = cli({"simulate", (tmp / "w").string()});
    const auto b = cli({"simulate", (tmp / "w").string()});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    write_text(tmp / "w2",
               "seed = 12\nduration = 300\ndevices = 2\ntotal_budget = 262144\nsegment_target = 2048\n"
               "rate.security = 1.5\nrate.firewall = 2\nrate.general_info = 0.5\nspammers = 1\n");
    CHECK(cli({"simulate", (tmp / "w2").string()}).out != a.out);
  }
  SUBCASE("spammer peers score below clean peers") {
    const auto spec = WorkloadSpec::load(source_dir() / "scenarios" / "table1.workload");
    const auto report = simulate(spec, tmp / "work");
    for (const auto& [device, scores] : report.reputation) {
      REQUIRE(!scores.empty());
      CHECK(scores.front().score < scores.back().score);
    }
  }
  SUBCASE("invalid specs") {
    for (const char* bad : {"devices = 0\n", "duration = -1\n", "rate.security = -2\n", "message_min = 10\nmessage_max = 5\n",
                            "spam_ratio = 1.5\n", "seed = banana\n", "turbo = 1\n"}) {
      CAPTURE(bad);
      write_text(tmp / "bad", bad);
      CHECK(cli({"simulate", (tmp / "bad").string()}).code == 1);
      try {
        WorkloadSpec::load(tmp / "bad");
        FAIL("accepted");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SpecInvalid);
      }
    }
    write_text(tmp / "ok", "devices = 1\n");
    fs::create_directories(tmp / "busy");
    write_text(tmp / "busy" / "file", "x");
    CHECK(cli({"simulate", (tmp / "ok").string(), "--workdir", (tmp / "busy").string()}).code == 1);
  }
}
