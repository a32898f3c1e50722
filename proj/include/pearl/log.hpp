#pragma once

#include <string>

namespace pearl {

// Verbosity from PEARL_LOG (debug|info, default info). Messages go to stderr.
void log_info(const std::string& msg);
void log_debug(const std::string& msg);
bool log_debug_enabled();

}  // namespace pearl
