#include "wid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wid/common.hpp"
#include "wid/ops.hpp"

namespace wid {

namespace {

// walks the held-out set once in batches, clamping the tail
template <typename MakeBatch, typename Visit>
void for_each_eval_batch(const CorpusData& data, int batch_size, MakeBatch make, Visit visit) {
    if (data.n_seqs <= 0) throw ConfigError("evaluation corpus is empty");
    if (batch_size <= 0) throw ConfigError("eval batch size must be positive");
    for (int64_t first = 0; first < data.n_seqs; first += batch_size) {
        int bs = static_cast<int>(std::min<int64_t>(batch_size, data.n_seqs - first));
        Batch b = make(first, bs);
        visit(b);
    }
}

EvalResult scored_metrics(const ModelWeights& w, const CorpusData& data, int batch_size,
                          bool causal, uint64_t seed) {
    Activations acts;
    Tensor dlogits;
    double loss_sum = 0.0;
    int64_t scored = 0, correct = 0;
    auto make = [&](int64_t first, int bs) {
        return causal ? make_causal_eval_batch(data, first, bs)
                      : make_mlm_eval_batch(data, first, bs, seed);
    };
    for_each_eval_batch(data, batch_size, make, [&](const Batch& b) {
        forward(w, b, acts);
        dlogits = Tensor::zeros(acts.logits.shape);
        double mean = ops::masked_cross_entropy(acts.logits, b.targets, dlogits);
        int64_t n_scored = 0;
        int v = w.cfg.vocab;
        for (size_t i = 0; i < b.targets.size(); ++i) {
            int32_t t = b.targets[i];
            if (t < 0) continue;
            ++n_scored;
            const float* row = acts.logits.ptr() + i * v;
            int best = 0;
            for (int j = 1; j < v; ++j)
                if (row[j] > row[best]) best = j;
            if (best == t) ++correct;
        }
        loss_sum += mean * static_cast<double>(n_scored);
        scored += n_scored;
    });
    if (scored == 0) throw NumericError("evaluation scored no positions");
    EvalResult r;
    r.loss = loss_sum / static_cast<double>(scored);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
    r.scored = scored;
    return r;
}

}  // namespace

EvalResult mlm_eval(const ModelWeights& w, const CorpusData& heldout, int batch_size,
                    uint64_t seed) {
    if (w.cfg.mode != ModelMode::EncoderMLM) throw ConfigError("mlm_eval needs an encoder model");
    return scored_metrics(w, heldout, batch_size, false, seed);
}

EvalResult causal_eval(const ModelWeights& w, const CorpusData& heldout, int batch_size) {
    if (w.cfg.mode != ModelMode::DecoderCausal)
        throw ConfigError("causal_eval needs a decoder model");
    return scored_metrics(w, heldout, batch_size, true, 0);
}

EvalResult heldout_eval(const ModelWeights& w, const CorpusData& heldout, int batch_size,
                        uint64_t seed) {
    return w.cfg.mode == ModelMode::DecoderCausal ? causal_eval(w, heldout, batch_size)
                                                  : mlm_eval(w, heldout, batch_size, seed);
}

double js_divergence(const float* p, const float* q, int n) {
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        double pi = p[i], qi = q[i];
        double m = 0.5 * (pi + qi);
        if (m <= 0.0) continue;
        if (pi > 0.0) d += 0.5 * pi * std::log(pi / m);
        if (qi > 0.0) d += 0.5 * qi * std::log(qi / m);
    }
    return std::max(0.0, d);
}

namespace {

// min-total-cost injective head assignment via subset DP over teacher heads
std::vector<int> assign_heads(const std::vector<std::vector<double>>& cost) {
    int ns = static_cast<int>(cost.size());
    int nt = ns > 0 ? static_cast<int>(cost[0].size()) : 0;
    if (ns > nt) throw DimError("more student heads than teacher heads");
    if (nt > 20) throw ConfigError("head assignment supports at most 20 teacher heads");
    size_t total = size_t{1} << nt;
    const double inf = 1e300;
    std::vector<double> dp(total, inf);
    std::vector<int> from(total, -1);
    dp[0] = 0.0;
    for (size_t mask = 0; mask < total; ++mask) {
        if (dp[mask] >= inf) continue;
        int s = __builtin_popcountll(mask);
        if (s >= ns) continue;
        for (int t = 0; t < nt; ++t) {
            if (mask & (size_t{1} << t)) continue;
            size_t next = mask | (size_t{1} << t);
            double c = dp[mask] + cost[s][t];
            if (c < dp[next]) {
                dp[next] = c;
                from[next] = t;
            }
        }
    }
    size_t best_mask = 0;
    double best = inf;
    for (size_t mask = 0; mask < total; ++mask) {
        if (__builtin_popcountll(mask) != ns) continue;
        if (dp[mask] < best) {
            best = dp[mask];
            best_mask = mask;
        }
    }
    if (best >= inf) throw NumericError("head assignment failed");
    std::vector<int> match(static_cast<size_t>(ns));
    size_t mask = best_mask;
    for (int s = ns - 1; s >= 0; --s) {
        int t = from[mask];
        match[static_cast<size_t>(s)] = t;
        mask &= ~(size_t{1} << t);
    }
    return match;
}

}  // namespace

DivergenceReport attention_divergence(const ModelWeights& student, const ModelWeights& teacher,
                                      const CorpusData& data, int batch_size, int n_batches,
                                      uint64_t seed, bool assignment) {
    const ModelConfig& sc = student.cfg;
    const ModelConfig& tc = teacher.cfg;
    if (sc.mode != tc.mode) throw ConfigError("attention comparison needs matching model modes");
    if (sc.n_layers != tc.n_layers)
        throw ConfigError("attention comparison needs matching layer counts");
    if (!assignment && sc.n_heads != tc.n_heads)
        throw ConfigError("index matching needs equal head counts");
    if (n_batches <= 0 || batch_size <= 0) throw ConfigError("divergence needs positive batches");

    int layers = sc.n_layers;
    int as = sc.n_heads, at = tc.n_heads;
    // cost[l][hs][ht]: summed row divergence, averaged at the end
    std::vector<std::vector<std::vector<double>>> cost(
        static_cast<size_t>(layers),
        std::vector<std::vector<double>>(static_cast<size_t>(as),
                                         std::vector<double>(static_cast<size_t>(at), 0.0)));
    int64_t rows_seen = 0;

    Activations sa, ta;
    bool causal = sc.mode == ModelMode::DecoderCausal;
    for (int bi = 0; bi < n_batches; ++bi) {
        int64_t span = std::max<int64_t>(1, data.n_seqs - batch_size + 1);
        int64_t first = (static_cast<int64_t>(bi) * batch_size) % span;
        int bs = static_cast<int>(std::min<int64_t>(batch_size, data.n_seqs - first));
        Batch b = causal ? make_causal_eval_batch(data, first, bs)
                         : make_mlm_eval_batch(data, first, bs, seed);
        forward(student, b, sa);
        forward(teacher, b, ta);
        int n = b.n;
        for (int l = 0; l < layers; ++l) {
            const Tensor& sp = sa.layers[static_cast<size_t>(l)].probs;  // [b*as*n, n]
            const Tensor& tp = ta.layers[static_cast<size_t>(l)].probs;
            for (int e = 0; e < b.b; ++e)
                for (int hs = 0; hs < as; ++hs)
                    for (int ht = 0; ht < at; ++ht) {
                        const float* srow = sp.ptr() + (static_cast<int64_t>(e) * as + hs) * n * n;
                        const float* trow = tp.ptr() + (static_cast<int64_t>(e) * at + ht) * n * n;
                        double acc = 0.0;
                        for (int i = 0; i < n; ++i)
                            acc += js_divergence(srow + static_cast<int64_t>(i) * n,
                                                 trow + static_cast<int64_t>(i) * n, n);
                        cost[static_cast<size_t>(l)][static_cast<size_t>(hs)]
                            [static_cast<size_t>(ht)] += acc;
                    }
        }
        rows_seen += static_cast<int64_t>(b.b) * n;
    }
    for (auto& per_layer : cost)
        for (auto& per_s : per_layer)
            for (double& c : per_s) c /= static_cast<double>(rows_seen);

    DivergenceReport rep;
    rep.per_head.resize(static_cast<size_t>(layers));
    rep.match.resize(static_cast<size_t>(layers));
    double sum = 0.0;
    for (int l = 0; l < layers; ++l) {
        std::vector<int> match;
        if (assignment) {
            match = assign_heads(cost[static_cast<size_t>(l)]);
        } else {
            match.resize(static_cast<size_t>(as));
            for (int h = 0; h < as; ++h) match[static_cast<size_t>(h)] = h;
        }
        rep.match[static_cast<size_t>(l)] = match;
        rep.per_head[static_cast<size_t>(l)].resize(static_cast<size_t>(as));
        for (int h = 0; h < as; ++h) {
            double d = cost[static_cast<size_t>(l)][static_cast<size_t>(h)]
                           [static_cast<size_t>(match[static_cast<size_t>(h)])];
            rep.per_head[static_cast<size_t>(l)][static_cast<size_t>(h)] = d;
            sum += d;
        }
    }
    rep.mean = sum / (static_cast<double>(layers) * static_cast<double>(as));
    return rep;
}

double kd_logit_loss(const Tensor& student_logits, const Tensor& teacher_logits, float tau) {
    Tensor dlogits = Tensor::zeros(student_logits.shape);
    std::vector<uint8_t> all;
    return ops::kd_kl_loss(teacher_logits, student_logits, tau, all, dlogits);
}

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

uint64_t fnv1a(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string EvalReport::config_hash() const {
    std::vector<int32_t> words = cfg.to_words();
    uint64_t h = fnv1a(words.data(), words.size() * sizeof(int32_t));
    h = fnv1a(&seed, sizeof(seed), h);
    return hex64(h);
}

std::string EvalReport::text() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "run: " << run_name << "\n";
    os << "version: " << kVersionString << "\n";
    os << "config_hash: " << config_hash() << "\n";
    os << "seed: " << seed << "\n";
    os << "mode: " << (cfg.mode == ModelMode::DecoderCausal ? "causal" : "mlm") << "\n";
    os << "layers: " << cfg.n_layers << "\n";
    os << "d_model: " << cfg.d_model << "\n";
    os << "heads: " << cfg.n_heads << "\n";
    os << "d_ff: " << cfg.d_ff << "\n";
    os << "vocab: " << cfg.vocab << "\n";
    os << "heldout_loss: " << heldout.loss << "\n";
    os << "heldout_accuracy: " << heldout.accuracy << "\n";
    os << "heldout_scored: " << heldout.scored << "\n";
    if (total_dropped_norm >= 0.0) os << "merge_dropped_norm: " << total_dropped_norm << "\n";
    if (has_divergence) {
        os << "mean_attention_js: " << divergence.mean << "\n";
        os << "attention_js_matrix:\n";
        for (size_t l = 0; l < divergence.per_head.size(); ++l) {
            os << "layer" << l;
            for (double d : divergence.per_head[l]) os << "\t" << d;
            os << "\n";
        }
    }
    return os.str();
}

std::string EvalReport::csv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "run,layer,head,teacher_head,js_divergence\n";
    if (has_divergence) {
        for (size_t l = 0; l < divergence.per_head.size(); ++l)
            for (size_t h = 0; h < divergence.per_head[l].size(); ++h)
                os << run_name << "," << l << "," << h << "," << divergence.match[l][h] << ","
                   << divergence.per_head[l][h] << "\n";
    }
    return os.str();
}

void EvalReport::write(const std::string& txt_path, const std::string& csv_path) const {
    auto dump = [](const std::string& path, const std::string& body) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write report: " + path);
        out << body;
        if (!out) throw IoError("short write: " + path);
    };
    dump(txt_path, text());
    if (!csv_path.empty()) dump(csv_path, csv());
}

}  // namespace wid
