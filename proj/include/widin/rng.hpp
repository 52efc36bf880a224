#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace widin {

// FNV-1a over raw bytes. Used for content checksums and for deriving
// sub-seeds from names, so it must stay stable forever.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mix a master seed with a purpose tag and integer coordinates into an
// independent stream seed. This is the one sub-seed derivation scheme used
// everywhere: nothing in the library reads ambient randomness, and every
// sample/draw is keyed by (seed, tag, indices), never by call order.
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
    uint64_t s = fnv1a64(tag) ^ (master * 0x9e3779b97f4a7c15ull);
    return splitmix64(s);
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a) {
    uint64_t s = derive_seed(master, tag) ^ (a + 0x632be59bd9b4e019ull) * 0xff51afd7ed558ccdull;
    return splitmix64(s);
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a, uint64_t b) {
    uint64_t s = derive_seed(master, tag, a) ^ (b + 0x9ddfea08eb382d69ull) * 0xc4ceb9fe1a85ec53ull;
    return splitmix64(s);
}

// Counter-based pseudo-random stream. Box-Muller normals are implemented
// here rather than via std::normal_distribution because the standard does
// not pin that distribution's algorithm and bitwise reproducibility is a
// contract of this library.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal, Box-Muller.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace widin
