#pragma once

#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace aloop {

/// Shared stderr logger for warnings that do not change an operation's result.
inline spdlog::logger& log() {
    static std::shared_ptr<spdlog::logger> logger = [] {
        auto existing = spdlog::get("aloop");
        return existing ? existing : spdlog::stderr_color_mt("aloop");
    }();
    return *logger;
}

}  // namespace aloop
