#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace colseg::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}
}  // namespace detail

// Replaces the warning sink; returns the previous one so callers can restore it.
inline Sink set_warning_sink(Sink s) {
  std::lock_guard lock(detail::sink_mutex());
  std::swap(detail::sink(), s);
  return s;
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::sink_mutex());
  if (detail::sink()) detail::sink()(msg);
}

}  // namespace colseg::log
