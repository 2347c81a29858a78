#include "cit3d/parallel.hpp"

#include <cstdlib>
#include <string>

namespace cit3d {

int worker_count(bool deterministic) {
    if (deterministic) return 1;
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* cap = std::getenv("CIT3D_THREADS")) {
        try {
            const int c = std::stoi(cap);
            if (c >= 1) n = std::min(n, c);
        } catch (const std::exception&) {
            // unparsable cap: keep the hardware count
        }
    }
    return n;
}

} // namespace cit3d
