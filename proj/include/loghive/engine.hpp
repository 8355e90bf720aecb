#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "loghive/archiver.hpp"
#include "loghive/classifier.hpp"
#include "loghive/clock.hpp"
#include "loghive/config.hpp"
#include "loghive/crypto.hpp"
#include "loghive/reputation.hpp"
#include "loghive/scheduler.hpp"
#include "loghive/vault.hpp"

namespace loghive {

struct EngineOptions {
  std::shared_ptr<const Clock> clock = std::make_shared<SystemClock>();
  VaultOptions vault;
  RetryPolicy retry;
};

/// One device: vault.conf, keyring.iotk, archive.manifest and the vault tree
/// under a single directory, with classification, reputation and the job
/// scheduler wired on top.
class Engine {
 public:
  static constexpr const char* kConfigFile = "vault.conf";
  static constexpr const char* kRingFile = "keyring.iotk";
  static constexpr const char* kManifestFile = "archive.manifest";

  /// Creates the directory layout, writes vault.conf and a fresh key ring.
  static void init(const std::filesystem::path& dir, const EngineConfig& config, const SecretKey& master);

  /// Opens with vault.conf and the master key source it names.
  static std::unique_ptr<Engine> open(const std::filesystem::path& dir, EngineOptions options = {});

  Engine(const std::filesystem::path& dir, EngineConfig config, const SecretKey& master, EngineOptions options = {});
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Classifies, appends and feeds the reputation engine.
  Receipt ingest(const LogRecord& record);
  TickResult tick();
  KeyId rotate_keys(Category category);
  void close();

  Vault& vault() { return *vault_; }
  const Vault& vault() const { return *vault_; }
  const ReputationEngine& reputation() const { return *reputation_; }
  RuleSet& rules() { return rules_; }
  const EngineConfig& config() const { return config_; }
  const KeyRing& ring() const { return *ring_; }
  Scheduler& scheduler() { return *scheduler_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  EngineConfig config_;
  std::shared_ptr<const Clock> clock_;
  std::shared_ptr<KeyRing> ring_;
  std::shared_ptr<Archiver> archiver_;
  std::unique_ptr<Vault> vault_;
  RuleSet rules_;
  std::unique_ptr<ReputationEngine> reputation_;
  std::unique_ptr<Scheduler> scheduler_;
};

}  // namespace loghive
