#pragma once

#include <atomic>
#include <chrono>

#include "loghive/record.hpp"

namespace loghive {

/// Time source injected into everything that needs "now"; engine logic never
/// reads the wall clock directly.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override {
    return std::chrono::time_point_cast<std::chrono::microseconds>(std::chrono::system_clock::now());
  }
};

class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(Timestamp start = Timestamp{}) : now_(start.time_since_epoch().count()) {}

  Timestamp now() const override { return Timestamp{std::chrono::microseconds{now_.load()}}; }
  void set(Timestamp t) { now_.store(t.time_since_epoch().count()); }
  void advance(std::chrono::microseconds d) { now_.fetch_add(d.count()); }

 private:
  std::atomic<std::int64_t> now_;
};

}  // namespace loghive
