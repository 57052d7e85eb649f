#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace glassdb {

using LogField = std::pair<std::string_view, std::string>;

/// Writes one JSON object per line: {"ts_ms", "level", "component", "event", fields...}.
void log_event(std::string_view level, std::string_view component, std::string_view event,
               std::initializer_list<LogField> fields = {});

/// Replaces the stderr sink; an empty function restores it.
void set_log_sink(std::function<void(const std::string& line)> sink);

}  // namespace glassdb
