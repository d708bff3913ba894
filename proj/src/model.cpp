#include "wid/model.hpp"

#include <cmath>

#include "wid/common.hpp"
#include "wid/kernels.hpp"
#include "wid/ops.hpp"
#include "wid/rng.hpp"

namespace wid {

float ModelConfig::attn_scale() const {
    const int s = scale_dk > 0 ? scale_dk : head_dim();
    return 1.0f / std::sqrt(static_cast<float>(s));
}

void ModelConfig::validate() const {
    // zero layers is a legal degenerate stack: logits = head(LN(embeddings))
    if (n_layers < 0) throw ConfigError("n_layers must be >= 0");
    if (d_model < 1 || d_ff < 1 || vocab < 5 || max_seq < 2)
        throw ConfigError("d_model/d_ff/vocab/max_seq out of range");
    if (n_heads < 1 || inner() % n_heads != 0)
        throw ConfigError("attention width " + std::to_string(inner()) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    if (mode == ModelMode::EncoderMLM && n_segments < 1)
        throw ConfigError("encoder mode needs n_segments >= 1");
}

std::vector<int32_t> ModelConfig::to_words() const {
    return {1,  // layout version
            n_layers, d_model, n_heads, d_ff, vocab, max_seq, n_segments,
            attn_inner, scale_dk,
            mode == ModelMode::DecoderCausal ? 1 : 0,
            ln_mode == LnMode::Identity ? 1 : 0};
}

ModelConfig ModelConfig::from_words(const std::vector<int32_t>& w) {
    if (w.size() != 12 || w[0] != 1) throw ConfigError("unrecognized model config layout");
    ModelConfig c;
    c.n_layers = w[1];
    c.d_model = w[2];
    c.n_heads = w[3];
    c.d_ff = w[4];
    c.vocab = w[5];
    c.max_seq = w[6];
    c.n_segments = w[7];
    c.attn_inner = w[8];
    c.scale_dk = w[9];
    c.mode = w[10] ? ModelMode::DecoderCausal : ModelMode::EncoderMLM;
    c.ln_mode = w[11] ? LnMode::Identity : LnMode::Standard;
    c.validate();
    return c;
}

bool ModelConfig::operator==(const ModelConfig& o) const {
    return to_words() == o.to_words();
}

Parameter& ModelWeights::p(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw IndexError("no parameter named " + name);
    return params[static_cast<size_t>(it->second)];
}

const Parameter& ModelWeights::p(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw IndexError("no parameter named " + name);
    return params[static_cast<size_t>(it->second)];
}

std::vector<Parameter*> ModelWeights::param_ptrs() {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (auto& pr : params) out.push_back(&pr);
    return out;
}

void ModelWeights::zero_grads() {
    for (auto& pr : params) pr.zero_grad();
}

int64_t ModelWeights::param_count() const {
    int64_t n = 0;
    for (const auto& pr : params) n += static_cast<int64_t>(pr.value.numel());
    return n;
}

int64_t param_count(const ModelConfig& c) {
    const int64_t d = c.d_model, ai = c.inner(), f = c.d_ff, v = c.vocab;
    int64_t emb = v * d + c.max_seq * d + 2 * d;
    if (c.mode == ModelMode::EncoderMLM) emb += static_cast<int64_t>(c.n_segments) * d;
    int64_t layer = 3 * (d * ai + ai)  // q, k, v
                    + ai * d + d       // output projection
                    + 2 * d            // ln1
                    + d * f + f        // up
                    + f * d + d        // down
                    + 2 * d;           // ln2
    return emb + c.n_layers * layer + v;  // + tied-head bias
}

namespace {

void push_param(ModelWeights& w, const std::string& name, std::vector<int> shape) {
    w.index[name] = static_cast<int>(w.params.size());
    w.params.emplace_back(name, Tensor::zeros(std::move(shape)), ParamGroup::Base);
}

void build_params(ModelWeights& w) {
    const ModelConfig& c = w.cfg;
    const int d = c.d_model, ai = c.inner(), f = c.d_ff, v = c.vocab;
    push_param(w, "tok_emb", {v, d});
    push_param(w, "pos_emb", {c.max_seq, d});
    if (c.mode == ModelMode::EncoderMLM) push_param(w, "seg_emb", {c.n_segments, d});
    push_param(w, "emb_ln_g", {d});
    push_param(w, "emb_ln_b", {d});
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        push_param(w, pre + "q_w", {d, ai});
        push_param(w, pre + "q_b", {ai});
        push_param(w, pre + "k_w", {d, ai});
        push_param(w, pre + "k_b", {ai});
        push_param(w, pre + "v_w", {d, ai});
        push_param(w, pre + "v_b", {ai});
        push_param(w, pre + "o_w", {ai, d});
        push_param(w, pre + "o_b", {d});
        push_param(w, pre + "ln1_g", {d});
        push_param(w, pre + "ln1_b", {d});
        push_param(w, pre + "u_w", {d, f});
        push_param(w, pre + "u_b", {f});
        push_param(w, pre + "d_w", {f, d});
        push_param(w, pre + "d_b", {d});
        push_param(w, pre + "ln2_g", {d});
        push_param(w, pre + "ln2_b", {d});
    }
    push_param(w, "out_b", {v});
}

}  // namespace

ModelWeights ModelWeights::shell(const ModelConfig& cfg) {
    cfg.validate();
    ModelWeights w;
    w.cfg = cfg;
    build_params(w);
    return w;
}

ModelWeights ModelWeights::init(const ModelConfig& cfg, uint64_t seed) {
    ModelWeights w = shell(cfg);
    for (auto& pr : w.params) {
        const std::string& n = pr.name;
        const std::string tail = n.substr(n.size() - 2);
        if (tail == "_g") {
            pr.value.fill(1.0f);
        } else if (tail == "_b") {
            pr.value.fill(0.0f);
        } else {
            // one stream per parameter so layout changes never shift other
            // parameters' draws
            auto rng = make_rng(seed, RngStream::Init,
                                std::hash<std::string>{}(n) & 0xffffffffu);
            for (auto& x : pr.value.data) x = truncated_normal(rng, 0.02f);
        }
    }
    return w;
}

namespace {

// LN that honors LnMode::Identity by copying input through
Tensor ln_fwd(const ModelConfig& cfg, const Tensor& x, const Parameter& g, const Parameter& b,
              Tensor& mean, Tensor& rstd) {
    if (cfg.ln_mode == LnMode::Identity) {
        mean = Tensor::zeros({x.rows()});
        rstd = Tensor::zeros({x.rows()});
        rstd.fill(1.0f);
        return x;
    }
    return ops::layer_norm(x, g.value, b.value, cfg.ln_eps, mean, rstd);
}

void ln_bwd(const ModelConfig& cfg, const Tensor& x, Parameter& g, Parameter& b,
            const Tensor& mean, const Tensor& rstd, const Tensor& dy, Tensor& dx) {
    if (cfg.ln_mode == LnMode::Identity) {
        kern::add_inplace(dx.ptr(), dy.ptr(), dy.numel());
        return;
    }
    ops::layer_norm_backward(x, g.value, mean, rstd, dy, dx, g.grad, b.grad);
}

std::vector<int32_t> position_ids(int b, int n) {
    std::vector<int32_t> out(static_cast<size_t>(b) * n);
    for (int i = 0; i < b; ++i)
        for (int t = 0; t < n; ++t) out[static_cast<size_t>(i) * n + t] = t;
    return out;
}

}  // namespace

void forward(const ModelWeights& w, const Batch& batch, Activations& acts) {
    const ModelConfig& c = w.cfg;
    const int m = batch.b * batch.n;
    if (static_cast<int>(batch.ids.size()) != m) throw DimError("forward: batch ids size");
    if (batch.n > c.max_seq) throw DimError("forward: sequence longer than max_seq");
    acts.b = batch.b;
    acts.n = batch.n;

    acts.emb_sum = ops::embedding_gather(w.p("tok_emb").value, batch.ids);
    {
        Tensor pe = ops::embedding_gather(w.p("pos_emb").value, position_ids(batch.b, batch.n));
        kern::add_inplace(acts.emb_sum.ptr(), pe.ptr(), pe.numel());
        if (c.mode == ModelMode::EncoderMLM) {
            std::vector<int32_t> segs = batch.segs;
            if (segs.empty()) segs.assign(static_cast<size_t>(m), 0);
            Tensor se = ops::embedding_gather(w.p("seg_emb").value, segs);
            kern::add_inplace(acts.emb_sum.ptr(), se.ptr(), se.numel());
        }
    }
    acts.h0 = ln_fwd(c, acts.emb_sum, w.p("emb_ln_g"), w.p("emb_ln_b"),
                     acts.emb_ln_mean, acts.emb_ln_rstd);

    acts.layers.assign(static_cast<size_t>(c.n_layers), LayerActs{});
    const bool causal = c.mode == ModelMode::DecoderCausal;
    const Tensor* h = &acts.h0;
    for (int l = 0; l < c.n_layers; ++l) {
        LayerActs& a = acts.layers[static_cast<size_t>(l)];
        const std::string pre = "layer" + std::to_string(l) + ".";
        a.q = ops::linear(*h, w.p(pre + "q_w").value, w.p(pre + "q_b").value);
        a.k = ops::linear(*h, w.p(pre + "k_w").value, w.p(pre + "k_b").value);
        a.v = ops::linear(*h, w.p(pre + "v_w").value, w.p(pre + "v_b").value);
        a.probs = Tensor::zeros({batch.b * c.n_heads * batch.n, batch.n});
        a.att = Tensor::zeros({m, c.inner()});
        kern::attention_forward(a.q.ptr(), a.k.ptr(), a.v.ptr(), a.probs.ptr(), a.att.ptr(),
                                batch.b, batch.n, c.n_heads, c.head_dim(), c.attn_scale(), causal);
        a.att_proj = ops::linear(a.att, w.p(pre + "o_w").value, w.p(pre + "o_b").value);
        a.res1 = *h;
        kern::add_inplace(a.res1.ptr(), a.att_proj.ptr(), a.att_proj.numel());
        a.h1 = ln_fwd(c, a.res1, w.p(pre + "ln1_g"), w.p(pre + "ln1_b"), a.ln1_mean, a.ln1_rstd);
        a.ffn_pre = ops::linear(a.h1, w.p(pre + "u_w").value, w.p(pre + "u_b").value);
        a.ffn_act = ops::gelu(a.ffn_pre);
        a.ffn_out = ops::linear(a.ffn_act, w.p(pre + "d_w").value, w.p(pre + "d_b").value);
        a.res2 = a.h1;
        kern::add_inplace(a.res2.ptr(), a.ffn_out.ptr(), a.ffn_out.numel());
        a.h2 = ln_fwd(c, a.res2, w.p(pre + "ln2_g"), w.p(pre + "ln2_b"), a.ln2_mean, a.ln2_rstd);
        h = &a.h2;
    }

    // tied output head: logits = h @ tok_emb^T + out_b
    acts.logits = Tensor::zeros({m, c.vocab});
    kern::matmul_nt(h->ptr(), w.p("tok_emb").value.ptr(), acts.logits.ptr(), m, c.d_model, c.vocab);
    kern::add_bias_rows(acts.logits.ptr(), w.p("out_b").value.ptr(), m, c.vocab);
}

void backward(ModelWeights& w, const Batch& batch, const Activations& acts, const Tensor& dlogits) {
    const ModelConfig& c = w.cfg;
    const int m = batch.b * batch.n;
    if (dlogits.rows() != m || dlogits.cols() != c.vocab) throw DimError("backward: dlogits shape");
    const bool causal = c.mode == ModelMode::DecoderCausal;

    const Tensor& h_last = c.n_layers > 0 ? acts.layers.back().h2 : acts.h0;
    Tensor dh = Tensor::zeros({m, c.d_model});
    // head: dh = dlogits @ tok_emb, dtok_emb += dlogits^T @ h, dout_b += colsums
    kern::matmul_nn(dlogits.ptr(), w.p("tok_emb").value.ptr(), dh.ptr(), m, c.vocab, c.d_model);
    kern::matmul_tn(dlogits.ptr(), h_last.ptr(), w.p("tok_emb").grad.ptr(), m, c.vocab, c.d_model, true);
    kern::col_sum_acc(dlogits.ptr(), w.p("out_b").grad.ptr(), m, c.vocab);

    for (int l = c.n_layers - 1; l >= 0; --l) {
        const LayerActs& a = acts.layers[static_cast<size_t>(l)];
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Tensor& h_in = l == 0 ? acts.h0 : acts.layers[static_cast<size_t>(l) - 1].h2;

        Tensor dres2 = Tensor::zeros({m, c.d_model});
        ln_bwd(c, a.res2, w.p(pre + "ln2_g"), w.p(pre + "ln2_b"), a.ln2_mean, a.ln2_rstd, dh, dres2);

        Tensor dffn_act = Tensor::zeros({m, c.d_ff});
        ops::linear_backward(a.ffn_act, w.p(pre + "d_w").value, dres2,
                             &dffn_act, &w.p(pre + "d_w").grad, &w.p(pre + "d_b").grad);
        Tensor dffn_pre = Tensor::zeros({m, c.d_ff});
        ops::gelu_backward(a.ffn_pre, dffn_act, dffn_pre);
        Tensor dh1 = dres2;  // residual branch
        ops::linear_backward(a.h1, w.p(pre + "u_w").value, dffn_pre,
                             &dh1, &w.p(pre + "u_w").grad, &w.p(pre + "u_b").grad);

        Tensor dres1 = Tensor::zeros({m, c.d_model});
        ln_bwd(c, a.res1, w.p(pre + "ln1_g"), w.p(pre + "ln1_b"), a.ln1_mean, a.ln1_rstd, dh1, dres1);

        Tensor datt = Tensor::zeros({m, c.inner()});
        ops::linear_backward(a.att, w.p(pre + "o_w").value, dres1,
                             &datt, &w.p(pre + "o_w").grad, &w.p(pre + "o_b").grad);
        Tensor dq = Tensor::zeros({m, c.inner()});
        Tensor dk = Tensor::zeros({m, c.inner()});
        Tensor dv = Tensor::zeros({m, c.inner()});
        kern::attention_backward(a.q.ptr(), a.k.ptr(), a.v.ptr(), a.probs.ptr(), datt.ptr(),
                                 dq.ptr(), dk.ptr(), dv.ptr(),
                                 batch.b, batch.n, c.n_heads, c.head_dim(), c.attn_scale(), causal);
        Tensor dh_in = dres1;  // residual branch
        ops::linear_backward(h_in, w.p(pre + "q_w").value, dq,
                             &dh_in, &w.p(pre + "q_w").grad, &w.p(pre + "q_b").grad);
        ops::linear_backward(h_in, w.p(pre + "k_w").value, dk,
                             &dh_in, &w.p(pre + "k_w").grad, &w.p(pre + "k_b").grad);
        ops::linear_backward(h_in, w.p(pre + "v_w").value, dv,
                             &dh_in, &w.p(pre + "v_w").grad, &w.p(pre + "v_b").grad);
        dh = dh_in;
    }

    Tensor demb = Tensor::zeros({m, c.d_model});
    ln_bwd(c, acts.emb_sum, w.p("emb_ln_g"), w.p("emb_ln_b"), acts.emb_ln_mean, acts.emb_ln_rstd,
           dh, demb);
    ops::embedding_backward(demb, batch.ids, w.p("tok_emb").grad);
    ops::embedding_backward(demb, position_ids(batch.b, batch.n), w.p("pos_emb").grad);
    if (c.mode == ModelMode::EncoderMLM) {
        std::vector<int32_t> segs = batch.segs;
        if (segs.empty()) segs.assign(static_cast<size_t>(m), 0);
        ops::embedding_backward(demb, segs, w.p("seg_emb").grad);
    }
}

double model_loss(const ModelWeights& w, const Batch& batch, Activations& acts, Tensor& dlogits) {
    forward(w, batch, acts);
    dlogits = Tensor::zeros(acts.logits.shape);
    return ops::masked_cross_entropy(acts.logits, batch.targets, dlogits);
}

}  // namespace wid
