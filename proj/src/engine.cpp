#include "loghive/engine.hpp"

#include "loghive/error.hpp"

namespace loghive {

namespace fs = std::filesystem;

void Engine::init(const fs::path& dir, const EngineConfig& config, const SecretKey& master) {
  fs::create_directories(dir);
  if (fs::exists(dir / kConfigFile) || fs::exists(dir / kRingFile)) {
    throw Error(ErrorCode::ConfigInvalid, dir.string() + " is already initialized");
  }
  EngineConfig cfg = config;
  cfg.finalize();
  KeyRing::generate(master).save(dir / kRingFile);
  const auto text = cfg.to_text();
  std::FILE* f = std::fopen((dir / kConfigFile).c_str(), "w");
  if (!f || std::fwrite(text.data(), 1, text.size(), f) != text.size() || std::fclose(f) != 0) {
    throw Error(ErrorCode::StorageFailure, "cannot write " + (dir / kConfigFile).string());
  }
}

std::unique_ptr<Engine> Engine::open(const fs::path& dir, EngineOptions options) {
  auto cfg = EngineConfig::load(dir / kConfigFile);
  const auto master = cfg.master_key(dir);
  return std::make_unique<Engine>(dir, std::move(cfg), master, std::move(options));
}

Engine::Engine(const fs::path& dir, EngineConfig config, const SecretKey& master, EngineOptions options)
    : dir_(dir), config_(std::move(config)), clock_(std::move(options.clock)), rules_(config_.rules) {
  config_.finalize();
  rules_.replace(config_.rules);
  fs::create_directories(dir_);

  const auto ring_path = dir_ / kRingFile;
  ring_ = std::make_shared<KeyRing>(fs::exists(ring_path) ? KeyRing::load(ring_path, master)
                                                          : KeyRing::generate(master));
  ring_->bind_file(ring_path);

  std::string sink = config_.sink;
  if (sink.starts_with("dir:")) {
    const fs::path p(sink.substr(4));
    sink = "dir:" + (p.is_absolute() ? p : dir_ / p).string();
  }
  if (auto s = make_sink(sink)) {
    archiver_ = std::make_shared<Archiver>(std::move(s), dir_ / kManifestFile, clock_, options.retry);
  }

  vault_ = std::make_unique<Vault>(dir_, config_.total_budget, config_.partitions, ring_, clock_, archiver_,
                                   [&] {
                                     auto v = options.vault;
                                     v.segment_target = config_.segment_target;
                                     return v;
                                   }());

  reputation_ = std::make_unique<ReputationEngine>();
  for (const auto& r : vault_->query(Category::security)) reputation_->observe(r, Category::security);

  scheduler_ = std::make_unique<Scheduler>(*vault_, config_.periods, clock_->now());
}

Receipt Engine::ingest(const LogRecord& record) {
  const Category cat = rules_.classify(record);
  auto receipt = vault_->append(record, cat);
  reputation_->observe(record, cat);
  return receipt;
}

TickResult Engine::tick() { return scheduler_->tick(clock_->now()); }

KeyId Engine::rotate_keys(Category category) { return ring_->rotate(category); }

void Engine::close() { vault_->close(); }

}  // namespace loghive
