#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace metor {

// Error categories map onto CLI exit codes: usage=1, data=2, numeric=3.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Quiet = 3 };

namespace detail {
inline LogLevel& log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("METOR_LOG");
        if (!env) return LogLevel::Info;
        std::string v(env);
        if (v == "debug") return LogLevel::Debug;
        if (v == "info") return LogLevel::Info;
        if (v == "warn") return LogLevel::Warn;
        if (v == "quiet") return LogLevel::Quiet;
        return LogLevel::Info;
    }();
    return level;
}

inline void vlog(const char* tag, const char* fmt, va_list args) {
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, args);
    std::fprintf(stderr, "\n");
}
}  // namespace detail

inline void set_log_level(LogLevel level) { detail::log_level() = level; }

inline void log_debug(const char* fmt, ...) {
    if (detail::log_level() > LogLevel::Debug) return;
    va_list args;
    va_start(args, fmt);
    detail::vlog("debug", fmt, args);
    va_end(args);
}

inline void log_info(const char* fmt, ...) {
    if (detail::log_level() > LogLevel::Info) return;
    va_list args;
    va_start(args, fmt);
    detail::vlog("info", fmt, args);
    va_end(args);
}

inline void log_warn(const char* fmt, ...) {
    if (detail::log_level() > LogLevel::Warn) return;
    va_list args;
    va_start(args, fmt);
    detail::vlog("warn", fmt, args);
    va_end(args);
}

}  // namespace metor
