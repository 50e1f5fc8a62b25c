#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace harmony {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Child seed for a named component: splitmix64(master ^ fnv1a(label)).
// Arms that must share an initialization ask for the same label.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

    // Textual engine + distribution state, restorable bit-exactly on the same build.
    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace harmony
