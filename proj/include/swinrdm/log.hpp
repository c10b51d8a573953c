#pragma once

#include <iostream>
#include <sstream>

namespace swinrdm {

/// Progress messages go to stderr; SWINRDM_QUIET=1 silences them.
template <typename... Args>
void log_info(const Args&... args) {
    static const bool quiet = [] {
        const char* q = std::getenv("SWINRDM_QUIET");
        return q && *q && *q != '0';
    }();
    if (quiet) return;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(5);
    (os << ... << args);
    std::clog << "[swinrdm] " << os.str() << "\n";
}

} // namespace swinrdm
