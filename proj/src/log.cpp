#include "cast/log.hpp"

#include <cstdlib>
#include <mutex>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace cast::log {

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static std::once_flag once;
  static std::shared_ptr<spdlog::logger> instance;
  std::call_once(once, [] {
    instance = spdlog::stderr_color_st("cast");
    instance->set_pattern("[%H:%M:%S] %^%l%$ %v");
    spdlog::level::level_enum level = spdlog::level::info;
    if (const char* env = std::getenv("CAST_LOG_LEVEL")) {
      const std::string v = env;
      if (v == "error") level = spdlog::level::err;
      else if (v == "debug") level = spdlog::level::debug;
    }
    instance->set_level(level);
  });
  return instance;
}

}  // namespace

void init_from_env() { logger(); }

void error(std::string_view msg) { logger()->error("{}", msg); }
void info(std::string_view msg) { logger()->info("{}", msg); }
void debug(std::string_view msg) { logger()->debug("{}", msg); }

}  // namespace cast::log
