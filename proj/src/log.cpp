#include "pearl/log.hpp"

#include <cstdlib>
#include <cstring>
#include <iostream>

namespace pearl {

namespace {

int log_level() {
    static int level = [] {
        const char* v = std::getenv("PEARL_LOG");
        if (v && std::strcmp(v, "debug") == 0) return 2;
        return 1;
    }();
    return level;
}

}  // namespace

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[pearl] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[pearl:debug] " << msg << "\n";
}

bool log_debug_enabled() { return log_level() >= 2; }

}  // namespace pearl
