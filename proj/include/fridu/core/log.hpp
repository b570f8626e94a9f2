#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace fridu::log {

using Sink = std::function<void(const std::string&)>;

inline Sink& warning_sink() {
  static Sink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(sink_mutex());
  warning_sink()(msg);
}

/// Swaps the warning sink for the lifetime of the guard.
class ScopedSink {
 public:
  explicit ScopedSink(Sink s) : saved_(std::exchange(warning_sink(), std::move(s))) {}
  ~ScopedSink() { warning_sink() = std::move(saved_); }
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink saved_;
};

}  // namespace fridu::log
