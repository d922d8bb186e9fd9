#pragma once

#include <cstdint>
#include <string>

namespace radiomap {

enum class LogLevel { Error = 0, Warn = 1, Info = 2 };

// Threshold comes from the RADIOMAP_LOG environment variable
// ("error"|"warn"|"info" or 0|1|2), read once. Default: warn.
LogLevel log_level();

void log_error(const std::string& message);
void log_warn(const std::string& message);
void log_info(const std::string& message);

// Warnings are counted even when below the print threshold, so callers
// (and tests) can detect that a lossy fallback was taken.
std::uint64_t warning_count();

} // namespace radiomap
