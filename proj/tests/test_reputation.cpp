#include <doctest.h>

#include <random>

#include "loghive/error.hpp"
#include "loghive/reputation.hpp"
#include "test_support.hpp"

using namespace loghive;

namespace {

LogRecord peer_record(std::string peer, std::string msg, Flags flags = {}) {
  LogRecord r;
  r.device_id = "dev";
  r.peer_id = std::move(peer);
  r.message = std::move(msg);
  r.flags = flags;
  return r;
}

std::string random_text(std::mt19937_64& rng, std::size_t len) {
  std::string s(len, ' ');
  for (auto& c : s) c = static_cast<char>(' ' + rng() % 95);
  return s;
}

// All-pairs oracle, written directly from the definition.
double brute_force_sim(const std::vector<std::uint64_t>& fps) {
  if (fps.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < fps.size(); ++i) {
    bool near = false;
    for (std::size_t j = 0; j < fps.size(); ++j) {
      if (i != j && __builtin_popcountll(fps[i] ^ fps[j]) <= 3) near = true;
    }
    hits += near;
  }
  return static_cast<double>(hits) / static_cast<double>(fps.size());
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::StorageFailure;
}

}  // namespace

TEST_CASE("profile window is a ring of W events") {
  PeerProfile p("p1", 4);
  update_profile(p, peer_record("p1", "a"), Category::security);
  CHECK(p.window().size() == 1);
  for (int i = 0; i < 5; ++i) {
    update_profile(p, peer_record("p1", std::string(static_cast<std::size_t>(i + 10), 'x'), i == 0 ? Flags{Flag::spam} : Flags{}),
                   Category::security);
  }
  REQUIRE(p.window().size() == 4);
  CHECK(p.total_events() == 6);
  // The first two pushes ("a" and the flagged 10-byte one) have left the window.
  CHECK(p.window().front().size == 11);
  CHECK(p.flagged_count() == 0);
  CHECK(PeerProfile("x").capacity() == 256);
}

TEST_CASE("update_profile rejects foreign events") {
  PeerProfile p("p1");
  CHECK(code_of([&] { update_profile(p, peer_record("p1", "x"), Category::firewall); }) ==
        ErrorCode::CategoryMismatch);
  CHECK(code_of([&] { update_profile(p, peer_record("p2", "x"), Category::security); }) ==
        ErrorCode::CategoryMismatch);
  CHECK(p.window().empty());
}

TEST_CASE("fingerprint matches the reference implementation") {
  std::mt19937_64 rng(1);
  CHECK(content_fingerprint("") == 0);
  for (const char* s : {"a", "ab", "abc", "abcd", "abcde", "firewall: drop tcp/23"}) {
    CHECK(content_fingerprint(s) == testing::reference_fingerprint(s));
  }
  for (int i = 0; i < 500; ++i) {
    const auto m = random_text(rng, rng() % 300);
    CHECK(content_fingerprint(m) == testing::reference_fingerprint(m));
  }
  CHECK(content_fingerprint("same message") == content_fingerprint("same message"));
}

TEST_CASE("one-character edits stay within Hamming distance 8") {
  std::mt19937_64 rng(20240101);
  int within = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    const auto m = random_text(rng, 128 + rng() % 129);
    auto edited = m;
    const auto pos = rng() % m.size();
    do edited[pos] = static_cast<char>(' ' + rng() % 95);
    while (edited[pos] == m[pos]);
    within += hamming_distance(testing::reference_fingerprint(m), testing::reference_fingerprint(edited)) <= 8;
  }
  MESSAGE("one-character edits within distance 8: " << within << "/" << trials);
  CHECK(within >= 950);
}

TEST_CASE("features examples") {
  SUBCASE("zero case") {
    PeerProfile p("p");
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10; ++i) p.push(reduce_event(peer_record("p", random_text(rng, 100))));
    CHECK(features(p, 100) == Features{0, 0, 0});
  }
  SUBCASE("all flagged") {
    PeerProfile p("p");
    for (int i = 0; i < 10; ++i) p.push(reduce_event(peer_record("p", "m" + std::to_string(i), {Flag::virus})));
    CHECK(features(p, 2).spam == 1.0);
  }
  SUBCASE("4 of 8 byte-identical") {
    PeerProfile p("p");
    std::mt19937_64 rng(3);
    std::vector<std::uint64_t> fps;
    for (int i = 0; i < 8; ++i) {
      const auto m = i < 4 ? std::string("duplicate alert from upstream peer") : random_text(rng, 120);
      p.push(reduce_event(peer_record("p", m)));
      fps.push_back(testing::reference_fingerprint(m));
    }
    CHECK(brute_force_sim(fps) == 0.5);
    CHECK(features(p, 100).sim == 0.5);
  }
  SUBCASE("empty window") {
    CHECK(code_of([] { features(PeerProfile("p"), 10); }) == ErrorCode::EmptyWindow);
  }
  SUBCASE("size bounds are inclusive") {
    PeerProfile p("p");
    for (std::size_t n : {25, 24, 400, 401, 100}) p.push({n, false, n});
    CHECK(features(p, 100).size == doctest::Approx(0.4));
  }
}

TEST_CASE("f_sim equals the brute-force oracle on windows up to 32") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 32;
    std::deque<PeerEvent> w;
    std::vector<std::uint64_t> fps;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t fp;
      if (!fps.empty() && rng() % 3 == 0) {
        fp = fps[rng() % fps.size()];
        for (int k = static_cast<int>(rng() % 6); k > 0; --k) fp ^= 1ULL << (rng() % 64);
      } else {
        fp = rng();
      }
      fps.push_back(fp);
      w.push_back({1, false, fp});
    }
    CHECK(near_duplicate_fraction(w) == brute_force_sim(fps));
  }
}

TEST_CASE("f_size is invariant under scaling sizes and median together") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint64_t median = 1 + rng() % 500;
    const std::uint64_t scale = 1 + rng() % 50;
    PeerProfile a("p", 64), b("p", 64);
    for (int i = 0; i < 40; ++i) {
      const std::uint64_t size = rng() % (median * 6);
      a.push({size, false, rng()});
      b.push({size * scale, false, rng()});
    }
    CHECK(features(a, median).size == features(b, median * scale).size);
  }
}

TEST_CASE("score examples and weights") {
  CHECK(score({0, 0, 0}) == 10);
  CHECK(score({1, 1, 1}) == 1);
  CHECK(score({1, 0, 0}) == 5);
  CHECK(score({0, 1, 0}) == 8);
  CHECK(score({0, 0, 1}) == 7);
  CHECK(code_of([] { score({0, 0, 0}, {0.5, 0.5, 0.5}); }) == ErrorCode::BadWeights);
  CHECK(code_of([] { score({0, 0, 0}, {-0.1, 0.2, 0.3}); }) == ErrorCode::BadWeights);
  CHECK(score({1, 1, 1}, {0, 0, 0}) == 10);
  CHECK(code_of([] { ReputationEngine(Weights{0.9, 0.9, 0}); }) == ErrorCode::BadWeights);
}

TEST_CASE("score bounds and monotonicity over random inputs") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    double ws = u(rng), wz = u(rng), wc = u(rng);
    const double sum = ws + wz + wc;
    const double cap = u(rng);
    ws *= cap / sum;
    wz *= cap / sum;
    wc *= cap / sum;
    const Weights w{ws, wz, wc};
    const Features f{u(rng), u(rng), u(rng)};
    const int s = score(f, w);
    CHECK(s >= 1);
    CHECK(s <= 10);
    const double bump = u(rng) * 0.5;
    CHECK(score({std::min(1.0, f.spam + bump), f.size, f.sim}, w) <= s);
    CHECK(score({f.spam, std::min(1.0, f.size + bump), f.sim}, w) <= s);
    CHECK(score({f.spam, f.size, std::min(1.0, f.sim + bump)}, w) <= s);
  }
}

TEST_CASE("report") {
  ReputationEngine engine;
  CHECK(engine.report(testing::ts(0)).empty());

  engine.observe(peer_record("zeta", "hello"), Category::security);
  engine.observe(peer_record("alpha", "world"), Category::security);
  engine.observe(peer_record("ignored", "x"), Category::firewall);
  auto no_peer = peer_record("x", "y");
  no_peer.peer_id.reset();
  engine.observe(no_peer, Category::security);
  CHECK(engine.peer_count() == 2);
  auto rows = engine.report(testing::ts(5));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].score == rows[1].score);
  CHECK(rows[0].peer_id == "alpha");
  CHECK(rows[1].peer_id == "zeta");
  CHECK(rows[0].computed_at == testing::ts(5));
  CHECK(format_score_line(rows[0]) == "alpha 10 0.000 0.000 0.000");
}

TEST_CASE("fleet median is the lower median of all windowed sizes") {
  ReputationEngine engine;
  CHECK(engine.fleet_median_size() == 0);
  for (std::size_t n : {5, 1, 9, 3}) engine.observe(peer_record(n % 2 ? "a" : "b", std::string(n, 'q')), Category::security);
  CHECK(engine.fleet_median_size() == 3);
}

TEST_CASE("a seeded spammer scores strictly below a clean peer") {
  std::mt19937_64 rng(7);
  ReputationEngine engine;
  const std::string spam_body = "WIN a FREE prize now, click http://example.invalid/claim?id=";
  for (int i = 0; i < 400; ++i) {
    if (rng() % 2) {
      const bool flagged = rng() % 10 < 6;
      engine.observe(peer_record("spammer", spam_body + std::to_string(rng() % 3), flagged ? Flags{Flag::spam} : Flags{}),
                     Category::security);
    } else {
      engine.observe(peer_record("clean", random_text(rng, 60 + rng() % 60)), Category::security);
    }
  }
  const auto rows = engine.report(testing::ts(0));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].peer_id == "spammer");
  CHECK(rows[0].score < rows[1].score);
  CHECK(rows[1].score == 10);
}
