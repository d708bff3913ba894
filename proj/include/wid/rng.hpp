// Deterministic, stateless-by-construction randomness.
//
// Every random decision in a run is drawn from a generator seeded by
// mix_seed(run_seed, stream, index). Seeding by (stream, index) instead of
// carrying generator state means training is resumable from a bare step
// counter and is independent of thread count.
#pragma once

#include <cstdint>
#include <random>

namespace wid {

enum class RngStream : uint64_t {
    Init = 1,        // weight initialization
    BatchOrder = 2,  // per-epoch shuffles
    MlmMask = 3,     // per-step training mask draws
    EvalMask = 4,    // per-sequence evaluation mask draws
    Corpus = 5,      // Markov transition tables
    CorpusSeq = 6,   // per-sequence corpus draws
};

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, RngStream stream, uint64_t index = 0) {
    uint64_t s = seed;
    uint64_t a = splitmix64(s);
    s ^= static_cast<uint64_t>(stream) * 0xff51afd7ed558ccdULL;
    uint64_t b = splitmix64(s);
    s ^= index * 0xc4ceb9fe1a85ec53ULL;
    uint64_t c = splitmix64(s);
    return a ^ (b << 1) ^ (c >> 1);
}

inline std::mt19937_64 make_rng(uint64_t seed, RngStream stream, uint64_t index = 0) {
    return std::mt19937_64(mix_seed(seed, stream, index));
}

// Normal(0, sigma) truncated to [-2 sigma, 2 sigma] by resampling.
inline float truncated_normal(std::mt19937_64& rng, float sigma) {
    std::normal_distribution<float> dist(0.0f, sigma);
    for (;;) {
        float x = dist(rng);
        if (x >= -2.0f * sigma && x <= 2.0f * sigma) return x;
    }
}

}  // namespace wid
