#include "loghive/cli.hpp"

#include <sys/stat.h>

#include <CLI11.hpp>
#include <csignal>
#include <istream>
#include <ostream>
#include <random>

#include "fsutil.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/engine.hpp"
#include "loghive/error.hpp"
#include "loghive/simulate.hpp"

namespace loghive {
namespace {

namespace fs = std::filesystem;

int exit_code_for(const Error& e) { return is_integrity_error(e.code()) ? kExitIntegrity : kExitInput; }

Category require_category(const std::string& name) {
  const auto c = parse_category(name);
  if (!c) throw Error(ErrorCode::ConfigInvalid, "unknown category '" + name + "'");
  return *c;
}

Timestamp require_time(const std::string& text) {
  const auto t = parse_rfc3339(text);
  if (!t) throw Error(ErrorCode::ConfigInvalid, "not an RFC 3339 instant: " + text);
  return *t;
}

void write_key_file(const fs::path& path, const SecretKey& key) {
  const auto hex = to_hex(key.bytes) + "\n";
  fsutil::write_file_atomic(path, detail::as_bytes(hex), true);
  ::chmod(path.c_str(), 0600);
}

int report_quarantine(const Engine& engine, std::ostream& err) {
  for (const auto& q : engine.vault().quarantined()) {
    err << "quarantined " << q.file.string() << ": " << q.reason << "\n";
  }
  return engine.vault().quarantined().empty() ? kExitOk : kExitIntegrity;
}

int cmd_init(const fs::path& dir, const std::string& config_path, std::uint64_t budget, const std::string& device_id,
             std::ostream& out) {
  EngineConfig cfg;
  if (!config_path.empty()) {
    cfg = EngineConfig::load(config_path);
  } else {
    if (budget) cfg.total_budget = budget;
    if (!device_id.empty()) cfg.device_id = device_id;
    cfg.finalize();
  }
  fs::create_directories(dir);
  std::optional<SecretKey> master;
  if (cfg.master_key_env) {
    master = cfg.master_key(dir);
  } else {
    if (!cfg.master_key_file) cfg.master_key_file = "master.key";
    const auto path = cfg.master_key_file->is_absolute() ? *cfg.master_key_file : dir / *cfg.master_key_file;
    if (fs::exists(path)) {
      master = SecretKey::from_file(path);
    } else {
      master = SecretKey::random();
      write_key_file(path, *master);
      out << "generated master key " << path.string() << "\n";
    }
  }
  Engine::init(dir, cfg, *master);
  out << "initialized " << dir.string() << " budget " << cfg.total_budget << "\n";
  return kExitOk;
}

int cmd_ingest(const fs::path& dir, std::istream& in, std::ostream& out, std::ostream& err) {
  auto engine = Engine::open(dir);
  std::uint64_t ok = 0;
  std::uint64_t malformed = 0;
  std::uint64_t rejected = 0;
  std::uint64_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      engine->ingest(parse_ingest_line(line));
      ++ok;
    } catch (const Error& e) {
      if (is_integrity_error(e.code())) throw;
      err << "line " << line_no << ": " << e.what() << "\n";
      (e.code() == ErrorCode::MalformedLine ? malformed : rejected) += 1;
    }
  }
  engine->vault().flush();
  out << "ingested " << ok << " malformed " << malformed << " rejected " << rejected << "\n";
  const int q = report_quarantine(*engine, err);
  if (q != kExitOk) return q;
  return ok == 0 && (malformed + rejected) > 0 ? kExitInput : kExitOk;
}

int cmd_query(const fs::path& dir, const std::string& category, const std::string& from, const std::string& to,
              std::size_t limit, std::ostream& out, std::ostream& err) {
  const auto cat = require_category(category);
  TimeRange range;
  if (!from.empty()) range.from = require_time(from);
  if (!to.empty()) range.to = require_time(to);
  auto engine = Engine::open(dir);
  for (const auto& r : engine->vault().query(cat, range, limit)) out << format_ingest_line(r) << "\n";
  return report_quarantine(*engine, err);
}

int cmd_status(const fs::path& dir, bool machine, bool color, std::ostream& out, std::ostream& err) {
  auto engine = Engine::open(dir);
  const auto matrix = snapshot_matrix({{engine->config().device_id, &engine->vault()}});
  out << render(matrix, {machine, color});
  return report_quarantine(*engine, err);
}

int cmd_rep(const fs::path& dir, std::ostream& out, std::ostream& err) {
  auto engine = Engine::open(dir);
  for (const auto& s : engine->reputation().report(SystemClock().now())) out << format_score_line(s) << "\n";
  return report_quarantine(*engine, err);
}

int cmd_rotate(const fs::path& dir, const std::vector<std::string>& categories, std::ostream& out) {
  std::vector<Category> cats;
  for (const auto& c : categories) cats.push_back(require_category(c));
  if (cats.empty()) cats.assign(kAllCategories.begin(), kAllCategories.end());
  auto engine = Engine::open(dir);
  for (Category c : cats) out << category_name(c) << " " << engine->rotate_keys(c).value << "\n";
  return kExitOk;
}

int cmd_archive_serve(const std::string& address, const fs::path& out_dir, std::ostream& out) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ConfigInvalid, "address must be host:port");
  int port = -1;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::ConfigInvalid, "bad port in " + address);
  fs::create_directories(out_dir);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by the server threads

  RemoteSinkServer server(address.substr(0, colon), static_cast<std::uint16_t>(port), out_dir);
  server.start();
  out << "listening on " << address.substr(0, colon) << ":" << server.port() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  out << "stored " << server.frames_stored() << " rejected " << server.frames_rejected() << "\n";
  return kExitOk;
}

int cmd_verify_archive(const fs::path& dir, std::string sink_dir, std::ostream& out) {
  if (sink_dir.empty()) {
    const auto cfg = EngineConfig::load(dir / Engine::kConfigFile);
    if (!cfg.sink.starts_with("dir:")) {
      throw Error(ErrorCode::ConfigInvalid, "sink is not a directory; pass --sink-dir");
    }
    const fs::path p(cfg.sink.substr(4));
    sink_dir = (p.is_absolute() ? p : dir / p).string();
  }
  const auto manifest = Manifest::load(dir / Engine::kManifestFile);
  const auto mismatches = verify_archive(manifest, sink_dir);
  for (const auto& m : mismatches) {
    out << (m.kind == ArchiveMismatch::Kind::missing ? "missing " : "digest_mismatch ") << m.id.hex() << "\n";
  }
  out << (mismatches.empty() ? "ok " : "failed ") << manifest.entries().size() << " entries\n";
  return mismatches.empty() ? kExitOk : kExitIntegrity;
}

int cmd_simulate(const fs::path& workload, const std::string& workdir, std::ostream& out) {
  const auto spec = WorkloadSpec::load(workload);
  fs::path dir = workdir;
  const bool temporary = dir.empty();
  if (temporary) {
    std::random_device rd;
    dir = fs::temp_directory_path() / ("loghive-sim-" + std::to_string(rd()) + std::to_string(rd()));
  }
  try {
    out << simulate(spec, dir).to_text();
  } catch (...) {
    if (temporary) fs::remove_all(dir);
    throw;
  }
  if (temporary) fs::remove_all(dir);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"loghive: partitioned, encrypted, quota-bounded log storage"};
  app.require_subcommand(1);

  std::string dir;
  std::string config_path;
  std::uint64_t budget = 0;
  std::string device_id;
  auto* init = app.add_subcommand("init", "Create a vault directory");
  init->add_option("dir", dir, "Vault directory")->required();
  init->add_option("--config", config_path, "vault.conf to start from");
  init->add_option("--budget", budget, "Total byte budget");
  init->add_option("--device-id", device_id, "Device identifier");

  auto* ingest = app.add_subcommand("ingest", "Append ingest-format lines from stdin");
  ingest->add_option("dir", dir, "Vault directory")->required();

  std::string category;
  std::string from;
  std::string to;
  std::size_t limit = std::numeric_limits<std::size_t>::max();
  auto* query = app.add_subcommand("query", "Print records of one partition");
  query->add_option("dir", dir, "Vault directory")->required();
  query->add_option("category", category, "Partition category")->required();
  query->add_option("--from", from, "Inclusive RFC 3339 lower bound");
  query->add_option("--to", to, "Inclusive RFC 3339 upper bound");
  query->add_option("--limit", limit, "Maximum records");

  bool machine = false;
  bool color = false;
  auto* status = app.add_subcommand("status", "Print the threshold status row");
  status->add_option("dir", dir, "Vault directory")->required();
  status->add_flag("--machine", machine, "Tab-separated output");
  status->add_flag("--color", color, "ANSI colors");

  auto* rep = app.add_subcommand("rep", "Print peer reputation scores");
  rep->add_option("dir", dir, "Vault directory")->required();

  std::vector<std::string> categories;
  auto* rotate = app.add_subcommand("rotate-keys", "Start new data keys");
  rotate->alias("rotate_keys");
  rotate->add_option("dir", dir, "Vault directory")->required();
  rotate->add_option("categories", categories, "Partitions (default all)");

  std::string address;
  auto* serve = app.add_subcommand("archive-serve", "Receive archived segments over TCP");
  serve->alias("archive_serve");
  serve->add_option("address", address, "host:port to listen on")->required();
  serve->add_option("dir", dir, "Output directory")->required();

  std::string sink_dir;
  auto* verify = app.add_subcommand("verify-archive", "Re-hash archived segments against the manifest");
  verify->alias("verify_archive");
  verify->add_option("dir", dir, "Vault directory")->required();
  verify->add_option("--sink-dir", sink_dir, "Archive directory (default: the configured dir: sink)");

  std::string workload;
  std::string workdir;
  auto* sim = app.add_subcommand("simulate", "Run a deterministic multi-device workload");
  sim->add_option("workload", workload, "Workload file")->required();
  sim->add_option("--workdir", workdir, "Keep device state here (must be empty)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*init) return cmd_init(dir, config_path, budget, device_id, out);
    if (*ingest) return cmd_ingest(dir, in, out, err);
    if (*query) return cmd_query(dir, category, from, to, limit, out, err);
    if (*status) return cmd_status(dir, machine, color, out, err);
    if (*rep) return cmd_rep(dir, out, err);
    if (*rotate) return cmd_rotate(dir, categories, out);
    if (*serve) return cmd_archive_serve(address, dir, out);
    if (*verify) return cmd_verify_archive(dir, sink_dir, out);
    if (*sim) return cmd_simulate(workload, workdir, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace loghive
