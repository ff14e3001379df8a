#include "core/rng.hpp"

#include <cmath>

namespace jointdiff {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, Rstream stream, uint64_t a, uint64_t b) {
    uint64_t h = splitmix64(master ^ 0x6a09e667f3bcc908ULL);
    h = splitmix64(h ^ static_cast<uint64_t>(stream));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // 1 - u keeps the log argument in (0, 1].
    const double u = 1.0 - uniform();
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint32_t Rng::uniform_int(uint32_t n) {
    // Rejection sampling on the top bits; unbiased for any n >= 1.
    const uint64_t span = n;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<uint32_t>(x % span);
}

}  // namespace jointdiff
