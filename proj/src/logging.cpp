#include "windformer/logging.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <mutex>
#include <set>

namespace windformer::log {
namespace {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("windformer");
    l->set_pattern("[%l] %v");
    return l;
  }();
  return instance;
}

}  // namespace

void info(std::string_view message) { logger()->info("{}", message); }

void warn(std::string_view message) { logger()->warn("{}", message); }

void warn_once(std::string_view key, std::string_view message) {
  static std::mutex mutex;
  static std::set<std::string, std::less<>> seen;
  {
    std::lock_guard lock(mutex);
    if (!seen.insert(std::string(key)).second) return;
  }
  warn(message);
}

void set_level(std::string_view level) {
  logger()->set_level(spdlog::level::from_str(std::string(level)));
}

}  // namespace windformer::log
