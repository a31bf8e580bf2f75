#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace nmsparse {

enum class LogLevel : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from NMSPARSE_LOG (error|warn|info|debug), default warn.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("NMSPARSE_LOG");
        if (env == nullptr) return LogLevel::Warn;
        if (std::strcmp(env, "error") == 0) return LogLevel::Error;
        if (std::strcmp(env, "info") == 0) return LogLevel::Info;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[nmsparse:%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

}  // namespace nmsparse
