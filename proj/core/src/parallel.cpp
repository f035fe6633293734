#include "cfpp/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>

namespace cfpp {

int threads_from_env() {
    const char* value = std::getenv("CFPP_THREADS");
    if (value == nullptr) {
        return 1;
    }
    int n = 0;
    const auto [ptr, ec] = std::from_chars(value, value + std::strlen(value), n);
    if (ec != std::errc() || n < 1) {
        return 1;
    }
    return n;
}

}  // namespace cfpp
