#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace morphsdf {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG. Uses mt19937_64 as the engine but hand-rolled
// float/normal draws, so streams do not depend on the standard library's
// distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // Derives an independent sub-stream from (seed, tags...). Generation is
    // parallel per sample; each worker forks its own stream this way.
    static Rng fork(uint64_t seed, std::initializer_list<uint64_t> tags) {
        uint64_t s = splitmix64(seed);
        for (uint64_t t : tags) s = splitmix64(s ^ (t + 0x632be59bd9b4e019ull));
        return Rng(s);
    }

    uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    float uniform() { return float(next_u64() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; pairs cached
    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        float u1 = 0.f, u2 = 0.f;
        do { u1 = uniform(); } while (u1 <= 1e-12f);
        u2 = uniform();
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.28318530717958647692f * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    float normal(float mean, float sigma) { return mean + sigma * normal(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

    std::vector<int> permutation(int n);

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    float spare_ = 0.f;
};

}  // namespace morphsdf
