#ifndef JOINTDIFF_RNG_HPP
#define JOINTDIFF_RNG_HPP

#include <cstdint>
#include <random>

namespace jointdiff {

// Purpose tags for deriving independent random streams from one master seed.
// Keeping streams per purpose means worker count and evaluation order never
// change which values a consumer sees.
enum class Rstream : uint64_t {
    dataset_gen = 1,
    split = 2,
    data_order = 3,
    train_time = 4,
    train_noise = 5,
    val_noise = 6,
    param_init = 7,
    sample = 8,
};

uint64_t splitmix64(uint64_t x);

// Derive a child seed from (master, purpose, a, b).
uint64_t derive_seed(uint64_t master, Rstream stream, uint64_t a = 0, uint64_t b = 0);

// Deterministic draws layered over std::mt19937_64. The engine's output
// sequence is pinned by the standard; the distributions are not, so uniforms,
// normals and bounded ints are generated here.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller with a cached spare.
    double normal();

    // Uniform integer in {0, ..., n-1}, n >= 1.
    uint32_t uniform_int(uint32_t n);

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace jointdiff

#endif
