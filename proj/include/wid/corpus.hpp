// Synthetic token corpus. Sequences start with CLS, end with SEP, and fill
// the middle from an order-2 Markov chain over the content vocabulary, with
// occasional fixed-offset copies planted so attention has something
// position-dependent to learn. Stored as "WIDCORP1" binary files.
//
// Batch construction is a pure function of (seed, step): each epoch gets its
// own shuffled sequence permutation, and MLM corruption draws from a stream
// keyed by the step, so training can resume from a bare step counter.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wid/model.hpp"

namespace wid {

// reserved token ids
inline constexpr int32_t kPad = 0;
inline constexpr int32_t kMask = 1;
inline constexpr int32_t kCls = 2;
inline constexpr int32_t kSep = 3;
inline constexpr int32_t kFirstContent = 4;

struct CorpusConfig {
    int vocab = 512;
    int seq_len = 16;
    int64_t n_seqs = 20000;
    uint64_t seed = 1;
    float copy_prob = 0.25f;  // chance a position repeats the token copy_offset back
    int copy_offset = 5;
    int64_t start_index = 0;  // first sequence index (stream position)
};

struct CorpusData {
    int vocab = 0;
    int seq_len = 0;
    int64_t n_seqs = 0;
    std::vector<int32_t> ids;  // [n_seqs * seq_len]

    const int32_t* seq(int64_t i) const { return ids.data() + i * seq_len; }
};

// next-token distribution of the chain: 4 candidates per (prev2, prev1) pair
// with probabilities 0.4/0.3/0.2/0.1
void markov_candidates(uint64_t seed, int vocab, int32_t prev2, int32_t prev1, int32_t out[4]);

CorpusData generate_corpus(const CorpusConfig& cfg);

void save_corpus(const std::string& path, const CorpusData& data);
CorpusData load_corpus(const std::string& path);

// 15% of content positions per sequence (at least one), of which 80% become
// MASK, 10% a random content token, 10% stay; targets hold the original ids
Batch make_mlm_batch(const CorpusData& data, int batch_size, uint64_t seed, int64_t step);
// deterministic per-sequence corruption for held-out evaluation
Batch make_mlm_eval_batch(const CorpusData& data, int64_t first_seq, int batch_size, uint64_t seed);

// next-token targets, ids unchanged
Batch make_causal_batch(const CorpusData& data, int batch_size, uint64_t seed, int64_t step);
Batch make_causal_eval_batch(const CorpusData& data, int64_t first_seq, int batch_size);

// the training-order sequence index for one slot of one step
int64_t batch_sequence_index(int64_t n_seqs, int batch_size, uint64_t seed, int64_t step, int slot);

}  // namespace wid
