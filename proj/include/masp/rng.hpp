#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>

namespace masp {

// Named consumers of randomness. Each gets an independent stream derived from
// the run seed, so adding a consumer never shifts another one's draws.
enum class Stream : std::uint64_t {
    init = 1,
    embedding_init = 2,
    sigma_init = 3,
    env_layout = 4,
    exploration = 5,
    replay = 6,
    meta_replay = 7,
    noise = 8,
    eval = 9,
    corpus = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Portable generator: mt19937_64 is fully specified by the standard, and the
// derived draws below avoid std distributions (whose output is
// implementation-defined) so streams are bit-reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    static Rng substream(std::uint64_t run_seed, Stream stream, std::uint64_t index = 0) {
        std::uint64_t s = splitmix64(run_seed);
        s = splitmix64(s ^ (static_cast<std::uint64_t>(stream) * 0x632be59bd9b4e019ULL));
        s = splitmix64(s ^ (index + 0x1d8e4e27c47d124fULL));
        return Rng(s);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled to stay unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::string serialize() const;
    void deserialize(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace masp
