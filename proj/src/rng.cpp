#include "harmony/rng.hpp"

#include <sstream>

#include "harmony/errors.hpp"

namespace harmony {

std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return splitmix64(master ^ h);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw ContractError("Rng::index: empty range");
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_ >> normal_;
    if (!is) throw IntegrityError("Rng::restore: malformed generator state");
}

}  // namespace harmony
