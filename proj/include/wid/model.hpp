// A small BERT-style transformer (post-norm residual blocks, learned
// positions, tied input/output embedding) with an optional causal decoder
// mode. Everything runs on flat float32 tensors; the backward pass is written
// out by hand.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "wid/tensor.hpp"

namespace wid {

enum class ModelMode { EncoderMLM, DecoderCausal };
enum class LnMode { Standard, Identity };

struct ModelConfig {
    int n_layers = 2;
    int d_model = 32;
    int n_heads = 4;
    int d_ff = 128;
    int vocab = 256;
    int max_seq = 64;
    int n_segments = 2;
    // width of the attention projections; 0 means d_model
    int attn_inner = 0;
    // attention logits are scaled by 1/sqrt(scale_dk); 0 means the own head
    // width. A compacted student keeps its teacher's value here so merged and
    // re-parameterized forward passes agree.
    int scale_dk = 0;
    ModelMode mode = ModelMode::EncoderMLM;
    LnMode ln_mode = LnMode::Standard;
    float ln_eps = 1e-5f;

    int inner() const { return attn_inner > 0 ? attn_inner : d_model; }
    int head_dim() const { return inner() / n_heads; }
    float attn_scale() const;
    void validate() const;

    std::vector<int32_t> to_words() const;
    static ModelConfig from_words(const std::vector<int32_t>& w);
    bool operator==(const ModelConfig& o) const;
};

struct Batch {
    int b = 0, n = 0;
    std::vector<int32_t> ids;      // [b*n] token ids (MLM-corrupted in encoder mode)
    std::vector<int32_t> segs;     // [b*n] segment ids, encoder mode only
    std::vector<int32_t> targets;  // [b*n], -1 = not scored
};

struct ModelWeights {
    ModelConfig cfg;
    std::vector<Parameter> params;
    std::unordered_map<std::string, int> index;

    Parameter& p(const std::string& name);
    const Parameter& p(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) > 0; }

    std::vector<Parameter*> param_ptrs();
    void zero_grads();
    int64_t param_count() const;

    // truncated-normal(0.02) weights, zero biases, unit layer-norm gains
    static ModelWeights init(const ModelConfig& cfg, uint64_t seed);
    // allocates the parameter set without touching values (for loading)
    static ModelWeights shell(const ModelConfig& cfg);
};

struct LayerActs {
    Tensor q, k, v;      // [b*n, inner]
    Tensor probs;        // [b*heads*n, n]
    Tensor att;          // [b*n, inner]
    Tensor att_proj;     // [b*n, d]
    Tensor res1;         // input + att_proj
    Tensor ln1_mean, ln1_rstd;
    Tensor h1;           // [b*n, d]
    Tensor ffn_pre;      // [b*n, d_ff]
    Tensor ffn_act;
    Tensor ffn_out;      // [b*n, d]
    Tensor res2;
    Tensor ln2_mean, ln2_rstd;
    Tensor h2;
};

struct Activations {
    int b = 0, n = 0;
    Tensor emb_sum;  // [b*n, d]
    Tensor emb_ln_mean, emb_ln_rstd;
    Tensor h0;
    std::vector<LayerActs> layers;
    Tensor logits;  // [b*n, vocab]
};

// exact parameter total for a config, without allocating anything
int64_t param_count(const ModelConfig& cfg);

// forward pass; logits land in acts.logits
void forward(const ModelWeights& w, const Batch& batch, Activations& acts);

// accumulates parameter gradients from dlogits; acts must come from forward
// on the same batch
void backward(ModelWeights& w, const Batch& batch, const Activations& acts, const Tensor& dlogits);

// builds MLM or next-token targets into dlogits via masked cross entropy
double model_loss(const ModelWeights& w, const Batch& batch, Activations& acts, Tensor& dlogits);

}  // namespace wid
