#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "wid/corpus.hpp"

using namespace wid;

namespace {

CorpusConfig small_cfg() {
    CorpusConfig cfg;
    cfg.vocab = 32;
    cfg.seq_len = 16;
    cfg.n_seqs = 2000;
    cfg.seed = 5;
    return cfg;
}

std::string tmp_path(const char* name) {
    return std::string("/tmp/wid_corpus_test_") + name;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("sequences carry the frame tokens and stay in range") {
    CorpusConfig cfg = small_cfg();
    CorpusData data = generate_corpus(cfg);
    REQUIRE(data.n_seqs == cfg.n_seqs);
    REQUIRE(data.seq_len == cfg.seq_len);
    for (int64_t i = 0; i < data.n_seqs; ++i) {
        const int32_t* seq = data.seq(i);
        CHECK(seq[0] == kCls);
        CHECK(seq[cfg.seq_len - 1] == kSep);
        for (int t = 1; t < cfg.seq_len - 1; ++t) {
            CHECK(seq[t] >= kFirstContent);
            CHECK(seq[t] < cfg.vocab);
        }
    }
}

TEST_CASE("generation is deterministic in the seed") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 50;
    CorpusData a = generate_corpus(cfg);
    CorpusData b = generate_corpus(cfg);
    CHECK(a.ids == b.ids);
    cfg.seed += 1;
    CorpusData c = generate_corpus(cfg);
    CHECK(a.ids != c.ids);
}

TEST_CASE("start index splits one stream into disjoint slices") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 10;
    CorpusData all = generate_corpus(cfg);

    CorpusConfig tail = cfg;
    tail.n_seqs = 4;
    tail.start_index = 6;
    CorpusData held = generate_corpus(tail);

    for (int64_t i = 0; i < held.n_seqs; ++i)
        for (int t = 0; t < cfg.seq_len; ++t) CHECK(held.seq(i)[t] == all.seq(6 + i)[t]);
}

TEST_CASE("config validation") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 0;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
    cfg = small_cfg();
    cfg.vocab = kFirstContent + 3;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
    cfg = small_cfg();
    cfg.copy_offset = cfg.seq_len;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
    cfg = small_cfg();
    cfg.seq_len = 3;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
}

TEST_CASE("token distribution matches exact chain propagation") {
    // with copies off, the empirical marginal at a deep position must match
    // the distribution obtained by propagating the chain law exactly
    CorpusConfig cfg = small_cfg();
    cfg.copy_prob = 0.0f;
    cfg.n_seqs = 20000;
    CorpusData data = generate_corpus(cfg);

    const double weights[4] = {0.4, 0.3, 0.2, 0.1};
    const std::vector<int> probe_positions = {10, 13};

    // dist over (prev2, prev1) just before each position is generated
    std::map<std::pair<int32_t, int32_t>, double> dist;
    dist[{kCls, kCls}] = 1.0;
    std::vector<std::vector<double>> marginals;
    for (int t = 1; t <= probe_positions.back(); ++t) {
        std::map<std::pair<int32_t, int32_t>, double> next;
        for (const auto& [state, prob] : dist) {
            int32_t cand[4];
            markov_candidates(cfg.seed, cfg.vocab, state.first, state.second, cand);
            for (int c = 0; c < 4; ++c)
                next[{state.second, cand[c]}] += prob * weights[c];
        }
        dist = std::move(next);
        std::vector<double> marg(static_cast<size_t>(cfg.vocab), 0.0);
        for (const auto& [state, prob] : dist) marg[static_cast<size_t>(state.second)] += prob;
        marginals.push_back(std::move(marg));
    }

    std::vector<double> oracle(static_cast<size_t>(cfg.vocab), 0.0);
    std::vector<double> emp(static_cast<size_t>(cfg.vocab), 0.0);
    for (int t : probe_positions) {
        const std::vector<double>& marg = marginals[static_cast<size_t>(t - 1)];
        for (int v = 0; v < cfg.vocab; ++v) oracle[static_cast<size_t>(v)] += marg[static_cast<size_t>(v)];
        for (int64_t i = 0; i < data.n_seqs; ++i) emp[static_cast<size_t>(data.seq(i)[t])] += 1.0;
    }
    const double total = static_cast<double>(data.n_seqs) * probe_positions.size();
    double tv = 0.0;
    for (int v = 0; v < cfg.vocab; ++v)
        tv += std::fabs(emp[static_cast<size_t>(v)] / total -
                        oracle[static_cast<size_t>(v)] / probe_positions.size());
    tv *= 0.5;
    CHECK(tv < 0.05);
}

TEST_CASE("planted copies dominate when the copy probability is high") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 400;
    cfg.copy_prob = 0.9f;
    cfg.copy_offset = 3;
    CorpusData data = generate_corpus(cfg);

    auto copy_rate = [&](const CorpusData& d) {
        int64_t hits = 0, total = 0;
        for (int64_t i = 0; i < d.n_seqs; ++i)
            for (int t = cfg.copy_offset + 1; t < d.seq_len - 1; ++t) {
                ++total;
                hits += d.seq(i)[t] == d.seq(i)[t - cfg.copy_offset];
            }
        return static_cast<double>(hits) / static_cast<double>(total);
    };
    CHECK(copy_rate(data) > 0.5);

    cfg.copy_prob = 0.0f;
    CHECK(copy_rate(generate_corpus(cfg)) < 0.3);
}

TEST_CASE("corpus files round-trip bit for bit") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 64;
    CorpusData data = generate_corpus(cfg);
    const std::string path = tmp_path("roundtrip.corp");
    save_corpus(path, data);
    CorpusData back = load_corpus(path);
    CHECK(back.vocab == data.vocab);
    CHECK(back.seq_len == data.seq_len);
    CHECK(back.n_seqs == data.n_seqs);
    CHECK(back.ids == data.ids);
    std::remove(path.c_str());
}

TEST_CASE("corrupt corpus files are rejected") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 8;
    CorpusData data = generate_corpus(cfg);
    const std::string path = tmp_path("corrupt.corp");

    SUBCASE("bad magic") {
        save_corpus(path, data);
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
        CHECK_THROWS_AS(load_corpus(path), IoError);
    }
    SUBCASE("truncated payload") {
        save_corpus(path, data);
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fseek(f, 0, SEEK_END);
        const long size = std::ftell(f);
        std::fclose(f);
        REQUIRE(truncate(path.c_str(), size - 8) == 0);
        CHECK_THROWS_AS(load_corpus(path), IoError);
    }
    SUBCASE("token id out of range") {
        CorpusData bad = data;
        bad.ids[20] = static_cast<int32_t>(cfg.vocab) + 7;
        save_corpus(path, bad);
        CHECK_THROWS_AS(load_corpus(path), IoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_corpus(tmp_path("does_not_exist.corp")), IoError);
    }
    std::remove(path.c_str());
}

TEST_CASE("each epoch visits distinct sequences") {
    const int64_t n_seqs = 10;
    const int bs = 3;
    const int64_t per_epoch = n_seqs / bs;

    for (int64_t epoch = 0; epoch < 2; ++epoch) {
        std::set<int64_t> seen;
        for (int64_t step = epoch * per_epoch; step < (epoch + 1) * per_epoch; ++step)
            for (int slot = 0; slot < bs; ++slot) {
                const int64_t idx = batch_sequence_index(n_seqs, bs, 9, step, slot);
                CHECK(idx >= 0);
                CHECK(idx < n_seqs);
                CHECK(seen.insert(idx).second);  // no repeats inside an epoch
            }
        CHECK(seen.size() == static_cast<size_t>(per_epoch * bs));
    }

    // epochs reshuffle: the flattened visit orders should differ
    std::vector<int64_t> e0, e1;
    for (int64_t step = 0; step < per_epoch; ++step)
        for (int slot = 0; slot < bs; ++slot) {
            e0.push_back(batch_sequence_index(n_seqs, bs, 9, step, slot));
            e1.push_back(batch_sequence_index(n_seqs, bs, 9, step + per_epoch, slot));
        }
    CHECK(e0 != e1);
    CHECK_THROWS_AS(batch_sequence_index(4, 5, 9, 0, 0), ConfigError);
}

TEST_CASE("training batches gather the scheduled sequences") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 40;
    CorpusData data = generate_corpus(cfg);
    const int bs = 4;
    for (int64_t step : {0, 3, 17}) {
        Batch b = make_causal_batch(data, bs, 11, step);
        REQUIRE(b.b == bs);
        REQUIRE(b.n == cfg.seq_len);
        for (int i = 0; i < bs; ++i) {
            const int64_t src = batch_sequence_index(data.n_seqs, bs, 11, step, i);
            for (int t = 0; t < b.n; ++t)
                CHECK(b.ids[static_cast<size_t>(i) * b.n + t] == data.seq(src)[t]);
        }
    }
}

TEST_CASE("causal targets shift by one") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 12;
    CorpusData data = generate_corpus(cfg);
    Batch b = make_causal_eval_batch(data, 2, 3);
    REQUIRE(b.b == 3);
    for (int i = 0; i < b.b; ++i) {
        for (int t = 0; t < b.n; ++t) {
            const size_t at = static_cast<size_t>(i) * b.n + t;
            if (t + 1 < b.n)
                CHECK(b.targets[at] == b.ids[at + 1]);
            else
                CHECK(b.targets[at] == -1);
        }
    }
}

TEST_CASE("mlm corruption hits the documented rates") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 2000;
    CorpusData data = generate_corpus(cfg);

    int64_t content_positions = 0, chosen = 0, masked = 0, randomized = 0, kept = 0;
    const int bs = 50;
    for (int64_t step = 0; step < data.n_seqs / bs; ++step) {
        Batch b = make_mlm_batch(data, bs, 13, step);
        for (int i = 0; i < b.b; ++i) {
            const int64_t src = batch_sequence_index(data.n_seqs, bs, 13, step, i);
            const int32_t* orig = data.seq(src);
            bool any = false;
            for (int t = 0; t < b.n; ++t) {
                const size_t at = static_cast<size_t>(i) * b.n + t;
                content_positions += orig[t] >= kFirstContent;
                if (b.targets[at] < 0) {
                    CHECK(b.ids[at] == orig[t]);  // untouched positions survive
                    continue;
                }
                any = true;
                ++chosen;
                CHECK(b.targets[at] == orig[t]);  // target is the original token
                CHECK(orig[t] >= kFirstContent);  // specials are never corrupted
                if (b.ids[at] == kMask)
                    ++masked;
                else if (b.ids[at] == orig[t])
                    ++kept;
                else {
                    ++randomized;
                    CHECK(b.ids[at] >= kFirstContent);
                }
            }
            CHECK(any);  // every sequence contributes at least one target
        }
    }

    const double pick_rate = static_cast<double>(chosen) / static_cast<double>(content_positions);
    CHECK(pick_rate > 0.12);
    CHECK(pick_rate < 0.20);
    const double n = static_cast<double>(chosen);
    CHECK(masked / n > 0.76);
    CHECK(masked / n < 0.84);
    CHECK(randomized / n > 0.06);
    CHECK(randomized / n < 0.14);
    CHECK(kept / n > 0.06);
    CHECK(kept / n < 0.15);
}

TEST_CASE("batches are pure functions of seed and step") {
    CorpusConfig cfg = small_cfg();
    cfg.n_seqs = 100;
    CorpusData data = generate_corpus(cfg);

    Batch a = make_mlm_batch(data, 8, 3, 42);
    Batch b = make_mlm_batch(data, 8, 3, 42);
    CHECK(a.ids == b.ids);
    CHECK(a.targets == b.targets);

    Batch c = make_mlm_batch(data, 8, 3, 43);
    CHECK(a.ids != c.ids);

    Batch e1 = make_mlm_eval_batch(data, 10, 6, 3);
    Batch e2 = make_mlm_eval_batch(data, 10, 6, 3);
    CHECK(e1.ids == e2.ids);
    CHECK(e1.targets == e2.targets);

    // eval corruption keys on the sequence, not the batch window
    Batch e3 = make_mlm_eval_batch(data, 11, 6, 3);
    for (int t = 0; t < e3.n; ++t)
        CHECK(e3.ids[static_cast<size_t>(t)] == e1.ids[static_cast<size_t>(e1.n) + t]);

    CHECK_THROWS_AS(make_mlm_eval_batch(data, 98, 6, 3), IndexError);
}

}  // TEST_SUITE
