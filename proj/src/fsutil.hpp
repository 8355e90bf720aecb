#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace loghive::fsutil {

std::vector<std::byte> read_file(const std::filesystem::path& path);

// Writes to `<path>.tmp`, optionally fsyncs, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes, bool sync);

// Writes all bytes to a raw descriptor, retrying on EINTR and short writes.
void write_all(int fd, std::span<const std::byte> bytes);

void sync_directory(const std::filesystem::path& dir);

// Owning POSIX file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& other) noexcept : fd_(other.release()) {}
  Fd& operator=(Fd&& other) noexcept;
  ~Fd();

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  void reset();

 private:
  int fd_ = -1;
};

}  // namespace loghive::fsutil
