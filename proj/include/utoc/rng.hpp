#ifndef UTOC_RNG_HPP
#define UTOC_RNG_HPP

#include <boost/random/normal_distribution.hpp>

#include <array>
#include <cstdint>
#include <utility>

namespace utoc {

/// Philox4x32-10 counter-based generator.
/// Output is a pure function of (counter, key): no state, no ordering dependence.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter apply(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }
};

/// Uniform 32-bit words from the Philox blocks of one (path, pair, channel) counter.
/// Successive blocks advance the upper half of the last counter word, so a consumer that
/// needs more than four words (a rejection sampler) still reads a pure function of the index.
class PhiloxWords {
public:
    using result_type = std::uint32_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return 0xffffffffu; }

    PhiloxWords(Philox4x32::Counter ctr, Philox4x32::Key key) : ctr_(ctr), key_(key) {}

    result_type operator()() {
        if (pos_ == 4) {
            block_ = Philox4x32::apply(ctr_, key_);
            ctr_[3] += 0x10000u;
            pos_ = 0;
        }
        return block_[pos_++];
    }

private:
    Philox4x32::Counter ctr_;
    Philox4x32::Key key_;
    Philox4x32::Counter block_{};
    int pos_ = 4;
};

/// Standard normal variates indexed by (path, step, channel).
///
/// Consecutive steps 2q and 2q+1 are drawn from one counter stream (Boost's ziggurat
/// sampler), so a caller that walks steps in order can cache the odd member.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed, std::uint32_t stream = 0)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32) ^ (stream * 0x85EBCA6Bu)} {}

    /// Normals for steps (2*pair_index, 2*pair_index + 1). Channels must be below 2^16.
    std::pair<double, double> normal_pair(std::uint64_t path, std::uint64_t pair_index, std::uint32_t channel) const {
        PhiloxWords words({static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32),
                           static_cast<std::uint32_t>(pair_index), channel & 0xffffu},
                          key_);
        boost::random::normal_distribution<double> normal;
        const double z0 = normal(words);
        const double z1 = normal(words);
        return {z0, z1};
    }

    double normal(std::uint64_t path, std::uint64_t step, std::uint32_t channel) const {
        const auto [z0, z1] = normal_pair(path, step >> 1, channel);
        return (step & 1u) ? z1 : z0;
    }

private:
    Philox4x32::Key key_;
};

}  // namespace utoc

#endif  // UTOC_RNG_HPP
