#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

namespace llmx {

using Duration = std::chrono::microseconds;
using Timestamp = std::chrono::time_point<std::chrono::system_clock, Duration>;

using namespace std::chrono_literals;

inline double to_ms(Duration d) { return static_cast<double>(d.count()) / 1000.0; }
inline Duration from_ms(double ms) { return Duration{std::llround(ms * 1000.0)}; }
inline Duration from_seconds(double s) { return Duration{std::llround(s * 1e6)}; }

/// Truncates to whole milliseconds, the precision carried on the wire.
inline Timestamp floor_ms(Timestamp t) {
  return std::chrono::time_point_cast<Duration>(std::chrono::floor<std::chrono::milliseconds>(t));
}

namespace detail {

// Howard Hinnant's days_from_civil / civil_from_days.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

inline bool parse_digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

/// "YYYY-MM-DDTHH:MM:SS.mmmZ" (UTC, millisecond precision).
inline std::string format_iso8601(Timestamp t) {
  const auto ms_total = std::chrono::floor<std::chrono::milliseconds>(t.time_since_epoch()).count();
  std::int64_t days = ms_total >= 0 ? ms_total / 86400000 : -((-ms_total + 86399999) / 86400000);
  const std::int64_t ms_of_day = ms_total - days * 86400000;
  const auto civil = detail::civil_from_days(days);
  const int hh = static_cast<int>(ms_of_day / 3600000);
  const int mm = static_cast<int>(ms_of_day / 60000 % 60);
  const int ss = static_cast<int>(ms_of_day / 1000 % 60);
  const int ms = static_cast<int>(ms_of_day % 1000);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02d.%03dZ",
                static_cast<long long>(civil.year), civil.month, civil.day, hh, mm, ss, ms);
  return buf;
}

/// Accepts "YYYY-MM-DDTHH:MM[:SS[.fff]]Z"; seconds and fraction are optional.
inline std::optional<Timestamp> parse_iso8601(std::string_view s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0, ms = 0;
  if (!detail::parse_digits(s, 0, 4, y) || s.size() < 17 || s[4] != '-' ||
      !detail::parse_digits(s, 5, 2, mo) || s[7] != '-' || !detail::parse_digits(s, 8, 2, d) ||
      s[10] != 'T' || !detail::parse_digits(s, 11, 2, h) || s[13] != ':' ||
      !detail::parse_digits(s, 14, 2, mi)) {
    return std::nullopt;
  }
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    if (!detail::parse_digits(s, pos + 1, 2, sec)) return std::nullopt;
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      std::size_t end = pos + 1;
      while (end < s.size() && s[end] >= '0' && s[end] <= '9') ++end;
      const std::size_t digits = end - pos - 1;
      if (digits == 0 || digits > 3) return std::nullopt;
      detail::parse_digits(s, pos + 1, digits, ms);
      for (std::size_t i = digits; i < 3; ++i) ms *= 10;
      pos = end;
    }
  }
  if (pos + 1 != s.size() || s[pos] != 'Z') return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const auto days = detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  if (detail::civil_from_days(days).day != static_cast<unsigned>(d)) return std::nullopt;
  const std::int64_t total_ms =
      ((days * 24 + h) * 60 + mi) * 60000 + static_cast<std::int64_t>(sec) * 1000 + ms;
  return Timestamp{Duration{total_ms * 1000}};
}

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

using TimerId = std::uint64_t;

/// A clock that also runs scheduled callbacks in time order. Events due at the
/// same instant run in the order they were scheduled.
class EventLoop : public Clock {
 public:
  virtual TimerId schedule_at(Timestamp when, std::function<void()> fn) = 0;
  TimerId schedule_after(Duration delay, std::function<void()> fn) {
    return schedule_at(now() + delay, std::move(fn));
  }
  virtual void cancel(TimerId id) = 0;
  /// Runs until no events remain.
  virtual void run() = 0;
  /// Runs every event due at or before `until`, then leaves the clock at `until`.
  virtual void run_until(Timestamp until) = 0;
  virtual std::size_t pending() const = 0;
};

/// Discrete-event clock: time jumps to the next due event. Single-threaded.
class VirtualClock final : public EventLoop {
 public:
  explicit VirtualClock(Timestamp start = Timestamp{}) : now_(start) {}

  Timestamp now() const override { return now_; }

  TimerId schedule_at(Timestamp when, std::function<void()> fn) override {
    if (when < now_) when = now_;
    const TimerId id = next_id_++;
    queue_.emplace(Key{when, id}, std::move(fn));
    index_.emplace(id, when);
    return id;
  }

  void cancel(TimerId id) override {
    auto it = index_.find(id);
    if (it == index_.end()) return;
    queue_.erase(Key{it->second, id});
    index_.erase(it);
  }

  bool step() {
    if (queue_.empty()) return false;
    auto node = queue_.extract(queue_.begin());
    index_.erase(node.key().second);
    now_ = node.key().first;
    node.mapped()();
    return true;
  }

  void run() override {
    while (step()) {
    }
  }

  void run_until(Timestamp until) override {
    while (!queue_.empty() && queue_.begin()->first.first <= until) step();
    if (until > now_) now_ = until;
  }

  void advance(Duration d) { run_until(now_ + d); }

  std::size_t pending() const override { return queue_.size(); }

 private:
  using Key = std::pair<Timestamp, TimerId>;
  Timestamp now_;
  TimerId next_id_ = 1;
  std::map<Key, std::function<void()>> queue_;
  std::unordered_map<TimerId, Timestamp> index_;
};

/// Wall-clock event loop. Callbacks run on the thread calling run(); other
/// threads may schedule and cancel concurrently.
class RealtimeClock final : public EventLoop {
 public:
  Timestamp now() const override {
    return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
  }

  TimerId schedule_at(Timestamp when, std::function<void()> fn) override {
    std::lock_guard lock(mu_);
    const TimerId id = next_id_++;
    queue_.emplace(Key{when, id}, std::move(fn));
    index_.emplace(id, when);
    cv_.notify_all();
    return id;
  }

  void cancel(TimerId id) override {
    std::lock_guard lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) return;
    queue_.erase(Key{it->second, id});
    index_.erase(it);
  }

  void run() override { loop(std::nullopt); }
  void run_until(Timestamp until) override { loop(until); }

  /// Keeps run() alive while the queue is empty, until stop() is called.
  void set_keep_alive(bool on) {
    std::lock_guard lock(mu_);
    keep_alive_ = on;
    cv_.notify_all();
  }

  void stop() {
    std::lock_guard lock(mu_);
    stopped_ = true;
    cv_.notify_all();
  }

  std::size_t pending() const override {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  using Key = std::pair<Timestamp, TimerId>;

  void loop(std::optional<Timestamp> until) {
    std::unique_lock lock(mu_);
    while (!stopped_) {
      if (queue_.empty()) {
        if (!keep_alive_ && !until) return;
        if (until && now() >= *until) return;
        if (until) {
          cv_.wait_until(lock, *until);
        } else {
          cv_.wait(lock);
        }
        continue;
      }
      const Timestamp due = queue_.begin()->first.first;
      if (until && due > *until) {
        if (now() >= *until) return;
        cv_.wait_until(lock, *until);
        continue;
      }
      if (now() < due) {
        cv_.wait_until(lock, due);
        continue;
      }
      auto node = queue_.extract(queue_.begin());
      index_.erase(node.key().second);
      lock.unlock();
      node.mapped()();
      lock.lock();
    }
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  TimerId next_id_ = 1;
  std::map<Key, std::function<void()>> queue_;
  std::unordered_map<TimerId, Timestamp> index_;
  bool keep_alive_ = false;
  bool stopped_ = false;
};

}  // namespace llmx
