// Held-out evaluation, attention-map comparison and the report files a run
// leaves behind. Divergence between two models is the mean Jensen-Shannon
// divergence (natural log, so bounded by ln 2) between matched attention
// rows, computed per (layer, head) over shared evaluation batches.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wid/corpus.hpp"
#include "wid/model.hpp"

namespace wid {

struct EvalResult {
    double loss = 0.0;      // mean cross entropy over all scored positions
    double accuracy = 0.0;  // argmax match rate over the same positions
    int64_t scored = 0;
};

// MLM metrics with deterministic per-sequence corruption keyed by seed
EvalResult mlm_eval(const ModelWeights& w, const CorpusData& heldout, int batch_size,
                    uint64_t seed);
// next-token metrics (no corruption, positions 0..n-2 scored)
EvalResult causal_eval(const ModelWeights& w, const CorpusData& heldout, int batch_size);
// dispatches on w.cfg.mode
EvalResult heldout_eval(const ModelWeights& w, const CorpusData& heldout, int batch_size,
                        uint64_t seed);

// Jensen-Shannon divergence of two length-n distributions, natural log
double js_divergence(const float* p, const float* q, int n);

struct DivergenceReport {
    // [layer][student head]: mean divergence against the matched teacher head
    std::vector<std::vector<double>> per_head;
    // [layer][student head] -> teacher head index
    std::vector<std::vector<int>> match;
    double mean = 0.0;
};

// Runs both models over the same evaluation batches and compares attention
// rows. With assignment=false heads pair index-to-index (head counts must
// agree); with assignment=true each layer pairs student heads to distinct
// teacher heads by minimum total divergence.
DivergenceReport attention_divergence(const ModelWeights& student, const ModelWeights& teacher,
                                      const CorpusData& data, int batch_size, int n_batches,
                                      uint64_t seed, bool assignment);

// KL(teacher || student) at temperature tau, averaged over rows
double kd_logit_loss(const Tensor& student_logits, const Tensor& teacher_logits, float tau);

struct EvalReport {
    std::string run_name;
    ModelConfig cfg;
    uint64_t seed = 0;
    EvalResult heldout;
    bool has_divergence = false;
    DivergenceReport divergence;
    double total_dropped_norm = -1.0;  // merge residual mass; < 0 means not a merged model

    std::string config_hash() const;
    // "key: value" lines plus a tab-separated per-head divergence matrix
    std::string text() const;
    // long-form CSV, one row per (layer, head)
    std::string csv() const;
    void write(const std::string& txt_path, const std::string& csv_path) const;
};

}  // namespace wid
