#pragma once

#include <string>
#include <string_view>

namespace windformer::log {

void info(std::string_view message);
void warn(std::string_view message);
/// Emits `message` the first time `key` is seen in this process.
void warn_once(std::string_view key, std::string_view message);
/// "debug", "info", "warn", "error" or "off".
void set_level(std::string_view level);

}  // namespace windformer::log
