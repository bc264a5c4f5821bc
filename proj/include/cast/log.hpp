#pragma once

#include <string_view>

namespace cast::log {

/// Reads CAST_LOG_LEVEL (error, info, debug; default info) once and
/// configures the process-wide logger writing to stderr.
void init_from_env();

void error(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);

}  // namespace cast::log
