#include "loghive/archiver.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsutil.hpp"
#include "loghive/detail/bytes.hpp"
#include "loghive/error.hpp"

namespace loghive {
namespace {

constexpr std::string_view kFrameMagic = "IOTA";
constexpr std::size_t kFrameHeaderBytes = 4 + 4 + 8;

std::string segment_filename(SegmentId id) { return "seg-" + id.hex() + ".iotl"; }

void set_timeouts(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

// Returns false on EOF or error before `out` is filled.
bool recv_exact(int fd, std::span<std::byte> out, std::size_t* received = nullptr) {
  std::size_t got = 0;
  bool ok = true;
  while (got < out.size()) {
    const auto n = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (n == 0) {
      ok = false;
      break;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      ok = false;
      break;
    }
    got += static_cast<std::size_t>(n);
  }
  if (received) *received = got;
  return ok;
}

bool send_all(int fd, std::span<const std::byte> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const auto n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

fsutil::Fd connect_to(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::SinkUnreachable, "cannot resolve " + host);
  }
  fsutil::Fd fd;
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    fsutil::Fd s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!s) continue;
    set_timeouts(s.get(), timeout);
    if (::connect(s.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
      fd = std::move(s);
      break;
    }
  }
  ::freeaddrinfo(res);
  if (!fd) throw Error(ErrorCode::SinkUnreachable, "cannot connect to " + host + ":" + service);
  return fd;
}

std::pair<std::string, std::uint16_t> split_host_port(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw Error(ErrorCode::ConfigInvalid, "expected host:port");
  std::string host(text.substr(0, colon));
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  unsigned port = 0;
  const auto p = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), port);
  if (ec != std::errc{} || ptr != p.data() + p.size() || port > 65535) {
    throw Error(ErrorCode::ConfigInvalid, "bad port in '" + std::string(text) + "'");
  }
  return {host, static_cast<std::uint16_t>(port)};
}

}  // namespace

std::string_view to_string(FaultPoint p) {
  switch (p) {
    case FaultPoint::journal_torn_write: return "journal_torn_write";
    case FaultPoint::journal_appended: return "journal_appended";
    case FaultPoint::segment_tmp_written: return "segment_tmp_written";
    case FaultPoint::segment_renamed: return "segment_renamed";
    case FaultPoint::journal_reset: return "journal_reset";
    case FaultPoint::archive_stored: return "archive_stored";
    case FaultPoint::archive_recorded: return "archive_recorded";
    case FaultPoint::segment_evicted: return "segment_evicted";
  }
  return "unknown";
}

std::string ManifestEntry::to_line() const {
  return id.hex() + " " + std::to_string(category_code) + " " + std::to_string(size) + " " + to_hex(digest) + " " +
         format_rfc3339(archived_at);
}

std::optional<ManifestEntry> ManifestEntry::parse_line(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::string id, cat, size, digest, ts, extra;
  if (!(in >> id >> cat >> size >> digest >> ts) || (in >> extra)) return std::nullopt;
  ManifestEntry e;
  const auto sid = SegmentId::parse_hex(id);
  const auto when = parse_rfc3339(ts);
  if (!sid || !when || digest.size() != 64) return std::nullopt;
  e.id = *sid;
  e.archived_at = *when;
  unsigned code = 0;
  if (std::from_chars(cat.data(), cat.data() + cat.size(), code).ec != std::errc{} || !category_from_index(static_cast<int>(code))) {
    return std::nullopt;
  }
  e.category_code = static_cast<std::uint8_t>(code);
  if (std::from_chars(size.data(), size.data() + size.size(), e.size).ec != std::errc{}) return std::nullopt;
  const auto raw = from_hex(digest);
  if (!raw || raw->size() != e.digest.size()) return std::nullopt;
  std::copy(raw->begin(), raw->end(), e.digest.begin());
  return e;
}

Manifest Manifest::load(const std::filesystem::path& path) {
  Manifest m;
  std::ifstream in(path);
  if (!in) return m;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final line: the append never completed
    const auto line = std::string_view(content).substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const auto e = ManifestEntry::parse_line(line);
    if (!e) throw Error(ErrorCode::CorruptSegment, "unparsable manifest line in " + path.string());
    if (m.index_.count(e->id) == 0) {
      m.index_[e->id] = m.entries_.size();
      m.entries_.push_back(*e);
    }
  }
  return m;
}

const ManifestEntry* Manifest::find(SegmentId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

void Manifest::append(const std::filesystem::path& path, const ManifestEntry& entry) {
  // Drop a torn final line left by an earlier crash so the new entry starts on
  // a line boundary.
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (!ec && size > 0) {
    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.back() != '\n') {
      const auto last_nl = content.rfind('\n');
      std::filesystem::resize_file(path, last_nl == std::string::npos ? 0 : last_nl + 1);
    }
  }
  fsutil::Fd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0600));
  if (!fd) throw Error(ErrorCode::StorageFailure, "cannot open manifest " + path.string());
  const std::string line = entry.to_line() + "\n";
  fsutil::write_all(fd.get(), detail::as_bytes(line));
  ::fdatasync(fd.get());
  index_[entry.id] = entries_.size();
  entries_.push_back(entry);
}

DirectorySink::DirectorySink(std::filesystem::path dir, bool sync) : dir_(std::move(dir)), sync_(sync) {}

void DirectorySink::store(SegmentId id, std::span<const std::byte> segment, const Digest& digest) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (!std::filesystem::is_directory(dir_)) throw Error(ErrorCode::SinkUnreachable, "no sink directory " + dir_.string());
  const auto target = dir_ / segment_filename(id);
  if (std::filesystem::exists(target)) {
    if (sha256(fsutil::read_file(target)) == digest) return;
  }
  try {
    fsutil::write_file_atomic(target, segment, sync_);
  } catch (const Error& e) {
    throw Error(ErrorCode::ShortWrite, e.what());
  }
}

std::vector<std::byte> encode_frame(SegmentId id, std::span<const std::byte> segment) {
  std::vector<std::byte> frame;
  frame.reserve(kFrameHeaderBytes + segment.size() + 32);
  detail::put_string(frame, kFrameMagic);
  detail::put_le<std::uint32_t>(frame, static_cast<std::uint32_t>(segment.size()));
  detail::put_le<std::uint64_t>(frame, id.value);
  detail::put_bytes(frame, segment);
  detail::put_bytes(frame, sha256(segment));
  return frame;
}

RemoteSink::RemoteSink(std::string host, std::uint16_t port, std::chrono::milliseconds io_timeout)
    : host_(std::move(host)), port_(port), timeout_(io_timeout) {}

void RemoteSink::store(SegmentId id, std::span<const std::byte> segment, const Digest& digest) {
  auto fd = connect_to(host_, port_, timeout_);
  const auto frame = encode_frame(id, segment);
  if (!send_all(fd.get(), frame)) throw Error(ErrorCode::ShortWrite, "connection lost while sending frame");
  Digest ack{};
  if (!recv_exact(fd.get(), ack)) throw Error(ErrorCode::ShortWrite, "no acknowledgement from " + describe());
  if (ack != digest) throw Error(ErrorCode::ShortWrite, "acknowledged digest does not match");
}

std::unique_ptr<ArchiveSink> make_sink(std::string_view spec) {
  if (spec.empty() || spec == "none") return nullptr;
  if (spec.starts_with("dir:")) return std::make_unique<DirectorySink>(std::filesystem::path(spec.substr(4)));
  if (spec.starts_with("tcp:")) {
    auto [host, port] = split_host_port(spec.substr(4));
    return std::make_unique<RemoteSink>(host, port);
  }
  throw Error(ErrorCode::ConfigInvalid, "sink must be dir:<path>, tcp:<host>:<port> or none");
}

Archiver::Archiver(std::unique_ptr<ArchiveSink> sink, std::filesystem::path manifest_path,
                   std::shared_ptr<const Clock> clock, RetryPolicy retry)
    : sink_(std::move(sink)),
      manifest_path_(std::move(manifest_path)),
      clock_(std::move(clock)),
      retry_(retry),
      manifest_(Manifest::load(manifest_path_)) {
  if (!sink_) throw Error(ErrorCode::ConfigInvalid, "archiver needs a sink");
}

ManifestEntry Archiver::archive_segment(std::span<const std::byte> segment_bytes, const SegmentMeta& meta) {
  std::lock_guard lock(mu_);
  if (const auto* existing = manifest_.find(meta.id)) return *existing;

  const auto digest = sha256(segment_bytes);
  auto backoff = retry_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      sink_->store(meta.id, segment_bytes, digest);
      break;
    } catch (const Error& e) {
      if (attempt >= retry_.attempts) throw;
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  if (fault_hook_) fault_hook_(FaultPoint::archive_stored);

  ManifestEntry entry;
  entry.id = meta.id;
  entry.category_code = static_cast<std::uint8_t>(partition_index(meta.category));
  entry.size = segment_bytes.size();
  entry.digest = digest;
  entry.archived_at = clock_->now();
  manifest_.append(manifest_path_, entry);
  if (fault_hook_) fault_hook_(FaultPoint::archive_recorded);
  return entry;
}

bool Archiver::contains(SegmentId id) const {
  std::lock_guard lock(mu_);
  return manifest_.find(id) != nullptr;
}

Manifest Archiver::manifest() const {
  std::lock_guard lock(mu_);
  return manifest_;
}

std::vector<ArchiveMismatch> verify_archive(const Manifest& manifest, const std::filesystem::path& sink_dir) {
  if (!std::filesystem::is_directory(sink_dir)) {
    throw Error(ErrorCode::SinkUnreachable, "cannot read sink directory " + sink_dir.string());
  }
  std::vector<ArchiveMismatch> out;
  for (const auto& e : manifest.entries()) {
    const auto file = sink_dir / segment_filename(e.id);
    std::error_code ec;
    if (!std::filesystem::is_regular_file(file, ec)) {
      out.push_back({e.id, ArchiveMismatch::Kind::missing});
      continue;
    }
    const auto bytes = fsutil::read_file(file);
    if (bytes.size() != e.size || sha256(bytes) != e.digest) {
      out.push_back({e.id, ArchiveMismatch::Kind::digest_mismatch});
    }
  }
  return out;
}

RemoteSinkServer::RemoteSinkServer(std::string host, std::uint16_t port, std::filesystem::path out_dir)
    : host_(std::move(host)), port_(port), sink_(std::move(out_dir)) {}

RemoteSinkServer::~RemoteSinkServer() { stop(); }

void RemoteSinkServer::bind_listener() {
  std::filesystem::create_directories(sink_.dir());
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port_);
  if (::getaddrinfo(host_.empty() ? nullptr : host_.c_str(), service.c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::SinkUnreachable, "cannot resolve listen address " + host_);
  }
  fsutil::Fd fd(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const bool ok = fd && ::bind(fd.get(), res->ai_addr, res->ai_addrlen) == 0 && ::listen(fd.get(), 16) == 0;
  ::freeaddrinfo(res);
  if (!ok) throw Error(ErrorCode::SinkUnreachable, std::string("cannot bind: ") + std::strerror(errno));

  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  bound_port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                                 : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  listen_fd_ = fd.release();
  running_ = true;
}

void RemoteSinkServer::start() {
  bind_listener();
  acceptor_ = std::thread([this] { accept_loop(); });
}

void RemoteSinkServer::run() {
  bind_listener();
  accept_loop();
}

void RemoteSinkServer::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(conn_mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

void RemoteSinkServer::accept_loop() {
  while (running_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    set_timeouts(fd, std::chrono::seconds(30));
    std::lock_guard lock(conn_mu_);
    open_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void RemoteSinkServer::serve_connection(int raw_fd) {
  fsutil::Fd fd(raw_fd);
  serve_frames(fd.get());
  std::lock_guard lock(conn_mu_);
  open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), raw_fd), open_fds_.end());
  fd.reset();
}

void RemoteSinkServer::serve_frames(int fd) {
  while (running_) {
    std::array<std::byte, kFrameHeaderBytes> header{};
    std::size_t got = 0;
    if (!recv_exact(fd, header, &got)) {
      if (got > 0) ++frames_rejected_;  // connection dropped mid-header
      break;
    }
    if (detail::as_chars(std::span(header).first(4)) != kFrameMagic) {
      ++frames_rejected_;
      break;
    }
    const auto len = detail::get_le<std::uint32_t>(header, 4);
    const SegmentId id{detail::get_le<std::uint64_t>(header, 8)};
    if (len > kMaxFrameSegmentBytes) {
      ++frames_rejected_;
      break;
    }
    std::vector<std::byte> body(len);
    Digest sent_digest{};
    if (!recv_exact(fd, body) || !recv_exact(fd, sent_digest)) {
      ++frames_rejected_;  // torn frame: nothing is written
      break;
    }
    const auto digest = sha256(body);
    if (digest != sent_digest) {
      ++frames_rejected_;
      break;
    }
    try {
      std::lock_guard lock(store_mu_);
      const auto target = sink_.dir() / segment_filename(id);
      if (std::filesystem::exists(target) && sha256(fsutil::read_file(target)) != digest) {
        ++frames_rejected_;  // never overwrite a different segment under the same id
        break;
      }
      sink_.store(id, body, digest);
    } catch (const Error&) {
      ++frames_rejected_;
      break;
    }
    ++frames_stored_;
    if (!send_all(fd, digest)) break;
  }
}

}  // namespace loghive
