#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stackdec {

// SplitMix64 step; used to derive member/replicate seeds from a base seed so
// that streams are decorrelated and the derivation is documented and portable.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t s = base ^ (0x9e3779b97f4a7c15ull * (index + 1));
    return splitmix64(s);
}

// Seedable generator with portable distributions. std::mt19937_64 is
// bit-identical across platforms; the normal transform is ours (Box-Muller)
// because std::normal_distribution is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform in (0, 1]
    double uniform_pos() { return 1.0 - uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // integer in [0, n)
    uint64_t below(uint64_t n) {
        // rejection sampling keeps the draw unbiased
        uint64_t threshold = (~uint64_t{0} - n + 1) % n;
        for (;;) {
            uint64_t r = gen_();
            if (r >= threshold) return r % n;
        }
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n - 1; i > 0; --i) {
            uint64_t j = below(i + 1);
            std::swap(first[i], first[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace stackdec
