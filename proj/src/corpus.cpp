#include "wid/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "wid/common.hpp"
#include "wid/rng.hpp"

namespace wid {

namespace {

constexpr char kCorpusMagic[8] = {'W', 'I', 'D', 'C', 'O', 'R', 'P', '1'};
constexpr uint32_t kCorpusVersion = 1;

double unit(std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

std::vector<int64_t> epoch_perm(int64_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_rng(seed, RngStream::BatchOrder, static_cast<uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

}  // namespace

void markov_candidates(uint64_t seed, int vocab, int32_t prev2, int32_t prev1, int32_t out[4]) {
    const int content = vocab - kFirstContent;
    const uint64_t key = (static_cast<uint64_t>(static_cast<uint32_t>(prev2)) << 32) |
                         static_cast<uint32_t>(prev1);
    uint64_t s = mix_seed(seed, RngStream::Corpus, key);
    for (int i = 0; i < 4; ++i)
        out[i] = kFirstContent + static_cast<int32_t>(splitmix64(s) % static_cast<uint64_t>(content));
}

CorpusData generate_corpus(const CorpusConfig& cfg) {
    if (cfg.vocab < kFirstContent + 4) throw ConfigError("corpus vocab too small");
    if (cfg.seq_len < 4) throw ConfigError("corpus seq_len too small");
    if (cfg.copy_offset < 1 || cfg.copy_offset >= cfg.seq_len)
        throw ConfigError("corpus copy_offset out of range");
    if (cfg.n_seqs < 1) throw ConfigError("corpus needs at least one sequence");

    CorpusData data;
    data.vocab = cfg.vocab;
    data.seq_len = cfg.seq_len;
    data.n_seqs = cfg.n_seqs;
    data.ids.resize(static_cast<size_t>(cfg.n_seqs) * cfg.seq_len);

    const int L = cfg.seq_len;
    int32_t cand[4];
    for (int64_t i = 0; i < cfg.n_seqs; ++i) {
        int32_t* seq = data.ids.data() + static_cast<size_t>(i) * L;
        auto rng = make_rng(cfg.seed, RngStream::CorpusSeq,
                            static_cast<uint64_t>(cfg.start_index + i));
        seq[0] = kCls;
        for (int t = 1; t < L - 1; ++t) {
            if (t > cfg.copy_offset && cfg.copy_prob > 0.0f && unit(rng) < cfg.copy_prob &&
                seq[t - cfg.copy_offset] >= kFirstContent) {
                seq[t] = seq[t - cfg.copy_offset];
                continue;
            }
            const int32_t p2 = t >= 2 ? seq[t - 2] : kCls;
            const int32_t p1 = seq[t - 1];
            markov_candidates(cfg.seed, cfg.vocab, p2, p1, cand);
            const double r = unit(rng);
            seq[t] = cand[r < 0.4 ? 0 : (r < 0.7 ? 1 : (r < 0.9 ? 2 : 3))];
        }
        seq[L - 1] = kSep;
    }
    return data;
}

void save_corpus(const std::string& path, const CorpusData& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(kCorpusMagic, sizeof(kCorpusMagic));
    const uint32_t ver = kCorpusVersion;
    const uint32_t vocab = static_cast<uint32_t>(data.vocab);
    const uint32_t seq_len = static_cast<uint32_t>(data.seq_len);
    const uint64_t n = static_cast<uint64_t>(data.n_seqs);
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(reinterpret_cast<const char*>(&vocab), 4);
    f.write(reinterpret_cast<const char*>(&seq_len), 4);
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(reinterpret_cast<const char*>(data.ids.data()),
            static_cast<std::streamsize>(data.ids.size() * 4));
    if (!f) throw IoError("write failed for " + path);
}

CorpusData load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCorpusMagic, 8) != 0) throw IoError(path + " is not a corpus file");
    uint32_t ver = 0, vocab = 0, seq_len = 0;
    uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    f.read(reinterpret_cast<char*>(&vocab), 4);
    f.read(reinterpret_cast<char*>(&seq_len), 4);
    f.read(reinterpret_cast<char*>(&n), 8);
    if (!f || ver != kCorpusVersion) throw IoError(path + ": unsupported corpus version");
    if (seq_len < 4 || vocab < kFirstContent + 4 || n < 1) throw IoError(path + ": corrupt corpus header");
    CorpusData data;
    data.vocab = static_cast<int>(vocab);
    data.seq_len = static_cast<int>(seq_len);
    data.n_seqs = static_cast<int64_t>(n);
    data.ids.resize(static_cast<size_t>(n) * seq_len);
    f.read(reinterpret_cast<char*>(data.ids.data()),
           static_cast<std::streamsize>(data.ids.size() * 4));
    if (!f) throw IoError(path + ": truncated corpus payload");
    for (int32_t id : data.ids)
        if (id < 0 || id >= static_cast<int32_t>(vocab)) throw IoError(path + ": token id out of range");
    return data;
}

int64_t batch_sequence_index(int64_t n_seqs, int batch_size, uint64_t seed, int64_t step, int slot) {
    if (batch_size < 1 || batch_size > n_seqs) throw ConfigError("batch size out of range");
    const int64_t per_epoch = n_seqs / batch_size;
    const int64_t epoch = step / per_epoch;
    const int64_t within = step % per_epoch;
    const std::vector<int64_t> perm = epoch_perm(n_seqs, seed, epoch);
    return perm[static_cast<size_t>(within * batch_size + slot)];
}

namespace {

Batch gather_sequences(const CorpusData& data, const std::vector<int64_t>& seq_ids) {
    Batch b;
    b.b = static_cast<int>(seq_ids.size());
    b.n = data.seq_len;
    b.ids.resize(static_cast<size_t>(b.b) * b.n);
    for (size_t i = 0; i < seq_ids.size(); ++i) {
        if (seq_ids[i] < 0 || seq_ids[i] >= data.n_seqs) throw IndexError("sequence index out of range");
        std::memcpy(b.ids.data() + i * static_cast<size_t>(b.n), data.seq(seq_ids[i]),
                    static_cast<size_t>(b.n) * 4);
    }
    return b;
}

std::vector<int64_t> train_order_slice(const CorpusData& data, int batch_size, uint64_t seed,
                                       int64_t step) {
    if (batch_size < 1 || batch_size > data.n_seqs) throw ConfigError("batch size out of range");
    const int64_t per_epoch = data.n_seqs / batch_size;
    const int64_t epoch = step / per_epoch;
    const int64_t within = step % per_epoch;
    const std::vector<int64_t> perm = epoch_perm(data.n_seqs, seed, epoch);
    return {perm.begin() + within * batch_size, perm.begin() + (within + 1) * batch_size};
}

// corrupts b.ids[slot] in place and fills targets; draws come from rng in a
// fixed order so the result only depends on the rng seeding
void corrupt_mlm_sequence(Batch& b, int slot, int vocab, std::mt19937_64& rng) {
    const int n = b.n;
    int32_t* ids = b.ids.data() + static_cast<size_t>(slot) * n;
    int32_t* tgt = b.targets.data() + static_cast<size_t>(slot) * n;
    std::vector<int> chosen;
    for (int t = 0; t < n; ++t) {
        if (ids[t] < kFirstContent) continue;  // leave specials alone
        if (unit(rng) < 0.15) chosen.push_back(t);
    }
    if (chosen.empty()) {
        // force one content position so the sequence contributes loss
        std::vector<int> content;
        for (int t = 0; t < n; ++t)
            if (ids[t] >= kFirstContent) content.push_back(t);
        if (content.empty()) return;
        chosen.push_back(content[rng() % content.size()]);
    }
    for (int t : chosen) {
        tgt[t] = ids[t];
        const double r = unit(rng);
        if (r < 0.8) {
            ids[t] = kMask;
        } else if (r < 0.9) {
            ids[t] = kFirstContent +
                     static_cast<int32_t>(rng() %
                                          static_cast<uint64_t>(vocab - kFirstContent));
        }  // else keep the original token
    }
}

}  // namespace

Batch make_mlm_batch(const CorpusData& data, int batch_size, uint64_t seed, int64_t step) {
    Batch b = gather_sequences(data, train_order_slice(data, batch_size, seed, step));
    b.targets.assign(b.ids.size(), -1);
    auto rng = make_rng(seed, RngStream::MlmMask, static_cast<uint64_t>(step));
    for (int i = 0; i < b.b; ++i) corrupt_mlm_sequence(b, i, data.vocab, rng);
    return b;
}

Batch make_mlm_eval_batch(const CorpusData& data, int64_t first_seq, int batch_size, uint64_t seed) {
    std::vector<int64_t> seq_ids(static_cast<size_t>(batch_size));
    std::iota(seq_ids.begin(), seq_ids.end(), first_seq);
    Batch b = gather_sequences(data, seq_ids);
    b.targets.assign(b.ids.size(), -1);
    for (int i = 0; i < b.b; ++i) {
        auto rng = make_rng(seed, RngStream::EvalMask, static_cast<uint64_t>(first_seq + i));
        corrupt_mlm_sequence(b, i, data.vocab, rng);
    }
    return b;
}

namespace {

void causal_targets(Batch& b) {
    b.targets.assign(b.ids.size(), -1);
    for (int i = 0; i < b.b; ++i)
        for (int t = 0; t + 1 < b.n; ++t)
            b.targets[static_cast<size_t>(i) * b.n + t] = b.ids[static_cast<size_t>(i) * b.n + t + 1];
}

}  // namespace

Batch make_causal_batch(const CorpusData& data, int batch_size, uint64_t seed, int64_t step) {
    Batch b = gather_sequences(data, train_order_slice(data, batch_size, seed, step));
    causal_targets(b);
    return b;
}

Batch make_causal_eval_batch(const CorpusData& data, int64_t first_seq, int batch_size) {
    std::vector<int64_t> seq_ids(static_cast<size_t>(batch_size));
    std::iota(seq_ids.begin(), seq_ids.end(), first_seq);
    Batch b = gather_sequences(data, seq_ids);
    causal_targets(b);
    return b;
}

}  // namespace wid
