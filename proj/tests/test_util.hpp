// Shared helpers for the unit tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "wid/model.hpp"
#include "wid/tensor.hpp"

namespace widtest {

inline std::mt19937_64 test_rng(uint64_t seed) { return std::mt19937_64(seed * 2654435761u + 1); }

inline wid::Tensor random_tensor(std::vector<int> shape, uint64_t seed, float scale = 1.0f) {
    wid::Tensor t = wid::Tensor::zeros(std::move(shape));
    auto rng = test_rng(seed);
    std::normal_distribution<float> nd(0.0f, scale);
    for (float& x : t.data) x = nd(rng);
    return t;
}

inline bool bit_equal(const wid::Tensor& a, const wid::Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.data.size(); ++i) {
        // compare representations so that 0.0f == -0.0f does not mask a diff
        if (std::memcmp(&a.data[i], &b.data[i], sizeof(float)) != 0) return false;
    }
    return true;
}

inline double max_abs_diff(const wid::Tensor& a, const wid::Tensor& b) {
    if (!a.same_shape(b)) return 1e300;
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

inline wid::ModelConfig tiny_config() {
    wid::ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.vocab = 64;
    c.max_seq = 8;
    return c;
}

// a random batch with ids drawn uniformly and every position scored
inline wid::Batch random_batch(const wid::ModelConfig& cfg, int b, int n, uint64_t seed) {
    wid::Batch batch;
    batch.b = b;
    batch.n = n;
    auto rng = test_rng(seed);
    std::uniform_int_distribution<int32_t> tok(0, cfg.vocab - 1);
    std::uniform_int_distribution<int32_t> seg(0, cfg.n_segments - 1);
    batch.ids.resize(static_cast<size_t>(b) * n);
    batch.segs.resize(static_cast<size_t>(b) * n);
    batch.targets.resize(static_cast<size_t>(b) * n);
    for (size_t i = 0; i < batch.ids.size(); ++i) {
        batch.ids[i] = tok(rng);
        batch.segs[i] = cfg.mode == wid::ModelMode::EncoderMLM ? seg(rng) : 0;
        batch.targets[i] = tok(rng);
    }
    return batch;
}

}  // namespace widtest
