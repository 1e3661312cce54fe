#pragma once

#include <functional>
#include <string>

namespace flow4dsr::log {

using Handler = std::function<void(const std::string&)>;

/// Replace the warning sink (default: stderr). Returns the previous handler.
Handler set_warn_handler(Handler h);

void warn(const std::string& msg);
void info(const std::string& msg);

} // namespace flow4dsr::log
