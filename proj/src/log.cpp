#include "glassdb/log.hpp"

#include <chrono>
#include <iostream>
#include <mutex>

#include <json.hpp>

namespace glassdb {

namespace {

std::mutex& log_mutex() {
  static std::mutex mu;
  return mu;
}

std::function<void(const std::string&)>& log_sink() {
  static std::function<void(const std::string&)> sink;
  return sink;
}

}  // namespace

void log_event(std::string_view level, std::string_view component, std::string_view event,
               std::initializer_list<LogField> fields) {
  nlohmann::json j;
  j["ts_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
  j["level"] = level;
  j["component"] = component;
  j["event"] = event;
  for (const auto& [k, v] : fields) j[std::string(k)] = v;
  auto line = j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::lock_guard lock(log_mutex());
  if (log_sink()) {
    log_sink()(line);
  } else {
    std::cerr << line << "\n";
  }
}

void set_log_sink(std::function<void(const std::string& line)> sink) {
  std::lock_guard lock(log_mutex());
  log_sink() = std::move(sink);
}

}  // namespace glassdb
