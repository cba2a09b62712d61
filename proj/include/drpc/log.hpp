#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace drpc {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Controlled by DRPC_LOG_LEVEL in {error, info, debug}; default info.
inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("DRPC_LOG_LEVEL");
        if (!env) return LogLevel::info;
        std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return lvl;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void log_info(const std::string& msg) { log_msg(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::debug, msg); }
inline void log_error(const std::string& msg) { log_msg(LogLevel::error, msg); }

} // namespace drpc
