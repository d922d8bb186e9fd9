#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace radiomap {

// Deterministic random source. Wraps mt19937_64 but derives doubles and
// bounded ints itself, so the produced streams depend only on the seed and
// not on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(eng_() % span);
    }

    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(eng_() % n);
    }

    template <typename T>
    const T& pick(const std::vector<T>& pool) {
        return pool[index(pool.size())];
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// Derives an independent sub-stream seed from a master seed, a purpose tag
// and an index. FNV-1a over the tag, then splitmix64 finalization.
inline std::uint64_t seed_for(std::uint64_t master, std::string_view tag,
                              std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (h ^ (index + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace radiomap
