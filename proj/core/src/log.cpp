#include "radiomap/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace radiomap {

namespace {

std::atomic<std::uint64_t> g_warnings{0};
std::mutex g_mutex;

LogLevel parse_level() {
    const char* env = std::getenv("RADIOMAP_LOG");
    if (env == nullptr || *env == '\0') return LogLevel::Warn;
    if (std::strcmp(env, "error") == 0 || std::strcmp(env, "0") == 0) return LogLevel::Error;
    if (std::strcmp(env, "warn") == 0 || std::strcmp(env, "1") == 0) return LogLevel::Warn;
    if (std::strcmp(env, "info") == 0 || std::strcmp(env, "2") == 0) return LogLevel::Info;
    return LogLevel::Warn;
}

void emit(const char* tag, const std::string& message) {
    std::lock_guard lock(g_mutex);
    std::fprintf(stderr, "%s: %s\n", tag, message.c_str());
}

} // namespace

LogLevel log_level() {
    static const LogLevel level = parse_level();
    return level;
}

void log_error(const std::string& message) {
    emit("error", message);
}

void log_warn(const std::string& message) {
    g_warnings.fetch_add(1, std::memory_order_relaxed);
    if (log_level() >= LogLevel::Warn) emit("warning", message);
}

void log_info(const std::string& message) {
    if (log_level() >= LogLevel::Info) emit("info", message);
}

std::uint64_t warning_count() {
    return g_warnings.load(std::memory_order_relaxed);
}

} // namespace radiomap
