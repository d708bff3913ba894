#include "wid/reparam.hpp"

#include <cmath>

#include "wid/alignment.hpp"
#include "wid/common.hpp"
#include "wid/kernels.hpp"
#include "wid/ops.hpp"

namespace wid {

Slot& ReparamModel::slot(const std::string& key) {
    auto it = slot_index.find(key);
    if (it == slot_index.end()) throw IndexError("no slot named " + key);
    return slots[static_cast<size_t>(it->second)];
}

const Slot& ReparamModel::slot(const std::string& key) const {
    auto it = slot_index.find(key);
    if (it == slot_index.end()) throw IndexError("no slot named " + key);
    return slots[static_cast<size_t>(it->second)];
}

int ReparamModel::group_index(const std::string& name) const {
    for (size_t i = 0; i < groups.size(); ++i)
        if (groups[i].name == name) return static_cast<int>(i);
    throw IndexError("no alignment group named " + name);
}

namespace {

void add_slot(ReparamModel& m, const std::string& site, SlotKind kind, int dim) {
    Slot s;
    s.site = site;
    s.kind = kind;
    const std::string key = site + (kind == SlotKind::Row ? ".rc" : ".cc");
    s.comp = Parameter(key, Tensor::identity(dim), ParamGroup::Compactor);
    m.slot_index[key] = static_cast<int>(m.slots.size());
    m.slots.push_back(std::move(s));
}

}  // namespace

ReparamModel ReparamModel::wrap(ModelWeights teacher) {
    ReparamModel m;
    m.base = std::move(teacher);
    const ModelConfig& c = m.base.cfg;
    const int d = c.d_model, ai = c.inner(), f = c.d_ff;

    add_slot(m, "emb", SlotKind::Column, d);
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        add_slot(m, pre + "q_w", SlotKind::Row, d);
        add_slot(m, pre + "q_w", SlotKind::Column, ai);
        add_slot(m, pre + "k_w", SlotKind::Row, d);
        add_slot(m, pre + "k_w", SlotKind::Column, ai);
        add_slot(m, pre + "v_w", SlotKind::Row, d);
        add_slot(m, pre + "v_w", SlotKind::Column, ai);
        add_slot(m, pre + "o_w", SlotKind::Row, ai);
        add_slot(m, pre + "o_w", SlotKind::Column, d);
        add_slot(m, pre + "u_w", SlotKind::Row, d);
        add_slot(m, pre + "u_w", SlotKind::Column, f);
        add_slot(m, pre + "d_w", SlotKind::Row, f);
        add_slot(m, pre + "d_w", SlotKind::Column, d);
    }
    add_slot(m, "out", SlotKind::Row, d);

    build_groups(m);
    broadcast_leaders(m);
    return m;
}

std::vector<Parameter*> ReparamModel::trainable_params() {
    std::vector<Parameter*> out = base.param_ptrs();
    for (const AlignmentGroup& g : groups)
        out.push_back(&slots[static_cast<size_t>(g.leader)].comp);
    return out;
}

void ReparamModel::zero_grads() {
    base.zero_grads();
    for (Slot& s : slots) s.comp.zero_grad();
}

namespace {

// y = (x @ rc @ w + b) @ cc with rc/cc optional
Tensor site_fwd(const Tensor& x, const Slot* rc, const Parameter& w, const Parameter& b,
                const Slot* cc, RpSiteActs& sa) {
    const Tensor* in = &x;
    if (rc) {
        sa.xr = ops::matmul(x, rc->comp.value);
        in = &sa.xr;
    }
    sa.yw = ops::linear(*in, w.value, b.value);
    if (cc) return ops::matmul(sa.yw, cc->comp.value);
    return sa.yw;
}

// accumulates into dx and all parameter grads
void site_bwd(const Tensor& x, Slot* rc, Parameter& w, Parameter& b, Slot* cc,
              const RpSiteActs& sa, const Tensor& dy, Tensor& dx) {
    Tensor dyw;
    const Tensor* dyw_p = &dy;
    if (cc) {
        dyw = Tensor::zeros(sa.yw.shape);
        ops::matmul_backward(sa.yw, cc->comp.value, dy, &dyw, &cc->comp.grad);
        dyw_p = &dyw;
    }
    const Tensor& xin = rc ? sa.xr : x;
    if (rc) {
        Tensor dxr = Tensor::zeros(sa.xr.shape);
        ops::linear_backward(xin, w.value, *dyw_p, &dxr, &w.grad, &b.grad);
        ops::matmul_backward(x, rc->comp.value, dxr, &dx, &rc->comp.grad);
    } else {
        ops::linear_backward(xin, w.value, *dyw_p, &dx, &w.grad, &b.grad);
    }
}

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

void rp_forward(const ReparamModel& m, const Batch& batch, RpActivations& acts) {
    const ModelConfig& c = m.base.cfg;
    const ModelWeights& w = m.base;
    const int mrows = batch.b * batch.n;
    if (static_cast<int>(batch.ids.size()) != mrows) throw DimError("rp_forward: batch ids size");
    acts.b = batch.b;
    acts.n = batch.n;

    acts.emb_sum = ops::embedding_gather(w.p("tok_emb").value, batch.ids);
    {
        Tensor pe = ops::embedding_gather(w.p("pos_emb").value, position_ids(batch.b, batch.n));
        kern::add_inplace(acts.emb_sum.ptr(), pe.ptr(), pe.numel());
        if (c.mode == ModelMode::EncoderMLM) {
            std::vector<int32_t> segs = batch.segs;
            if (segs.empty()) segs.assign(static_cast<size_t>(mrows), 0);
            Tensor se = ops::embedding_gather(w.p("seg_emb").value, segs);
            kern::add_inplace(acts.emb_sum.ptr(), se.ptr(), se.numel());
        }
    }
    acts.emb_cc_out = ops::matmul(acts.emb_sum, m.slot("emb.cc").comp.value);
    acts.h0 = ln_fwd(c, acts.emb_cc_out, w.p("emb_ln_g"), w.p("emb_ln_b"),
                     acts.emb_ln_mean, acts.emb_ln_rstd);

    acts.layers.assign(static_cast<size_t>(c.n_layers), RpLayerActs{});
    const bool causal = c.mode == ModelMode::DecoderCausal;
    const Tensor* h = &acts.h0;
    for (int l = 0; l < c.n_layers; ++l) {
        RpLayerActs& a = acts.layers[static_cast<size_t>(l)];
        const std::string pre = "layer" + std::to_string(l) + ".";
        a.q_out = site_fwd(*h, &m.slot(pre + "q_w.rc"), w.p(pre + "q_w"), w.p(pre + "q_b"),
                           &m.slot(pre + "q_w.cc"), a.q);
        a.k_out = site_fwd(*h, &m.slot(pre + "k_w.rc"), w.p(pre + "k_w"), w.p(pre + "k_b"),
                           &m.slot(pre + "k_w.cc"), a.k);
        a.v_out = site_fwd(*h, &m.slot(pre + "v_w.rc"), w.p(pre + "v_w"), w.p(pre + "v_b"),
                           &m.slot(pre + "v_w.cc"), a.v);
        a.probs = Tensor::zeros({batch.b * c.n_heads * batch.n, batch.n});
        a.att = Tensor::zeros({mrows, c.inner()});
        kern::attention_forward(a.q_out.ptr(), a.k_out.ptr(), a.v_out.ptr(), a.probs.ptr(),
                                a.att.ptr(), batch.b, batch.n, c.n_heads, c.head_dim(),
                                c.attn_scale(), causal);
        a.att_proj = site_fwd(a.att, &m.slot(pre + "o_w.rc"), w.p(pre + "o_w"), w.p(pre + "o_b"),
                              &m.slot(pre + "o_w.cc"), a.o);
        a.res1 = *h;
        kern::add_inplace(a.res1.ptr(), a.att_proj.ptr(), a.att_proj.numel());
        a.h1 = ln_fwd(c, a.res1, w.p(pre + "ln1_g"), w.p(pre + "ln1_b"), a.ln1_mean, a.ln1_rstd);
        a.ffn_pre = site_fwd(a.h1, &m.slot(pre + "u_w.rc"), w.p(pre + "u_w"), w.p(pre + "u_b"),
                             &m.slot(pre + "u_w.cc"), a.u);
        a.ffn_act = ops::gelu(a.ffn_pre);
        a.ffn_out = site_fwd(a.ffn_act, &m.slot(pre + "d_w.rc"), w.p(pre + "d_w"), w.p(pre + "d_b"),
                             &m.slot(pre + "d_w.cc"), a.d);
        a.res2 = a.h1;
        kern::add_inplace(a.res2.ptr(), a.ffn_out.ptr(), a.ffn_out.numel());
        a.h2 = ln_fwd(c, a.res2, w.p(pre + "ln2_g"), w.p(pre + "ln2_b"), a.ln2_mean, a.ln2_rstd);
        h = &a.h2;
    }

    // tied head behind the output row compactor
    acts.out_hr = ops::matmul(*h, m.slot("out.rc").comp.value);
    acts.logits = Tensor::zeros({mrows, c.vocab});
    kern::matmul_nt(acts.out_hr.ptr(), w.p("tok_emb").value.ptr(), acts.logits.ptr(),
                    mrows, c.d_model, c.vocab);
    kern::add_bias_rows(acts.logits.ptr(), w.p("out_b").value.ptr(), mrows, c.vocab);
}

void rp_backward(ReparamModel& m, const Batch& batch, const RpActivations& acts, const Tensor& dlogits) {
    ModelWeights& w = m.base;
    const ModelConfig& c = w.cfg;
    const int mrows = batch.b * batch.n;
    if (dlogits.rows() != mrows || dlogits.cols() != c.vocab) throw DimError("rp_backward: dlogits shape");
    const bool causal = c.mode == ModelMode::DecoderCausal;

    const Tensor& h_last = c.n_layers > 0 ? acts.layers.back().h2 : acts.h0;
    Tensor dhr = Tensor::zeros({mrows, c.d_model});
    kern::matmul_nn(dlogits.ptr(), w.p("tok_emb").value.ptr(), dhr.ptr(), mrows, c.vocab, c.d_model);
    kern::matmul_tn(dlogits.ptr(), acts.out_hr.ptr(), w.p("tok_emb").grad.ptr(),
                    mrows, c.vocab, c.d_model, true);
    kern::col_sum_acc(dlogits.ptr(), w.p("out_b").grad.ptr(), mrows, c.vocab);
    Tensor dh = Tensor::zeros({mrows, c.d_model});
    ops::matmul_backward(h_last, m.slot("out.rc").comp.value, dhr, &dh, &m.slot("out.rc").comp.grad);

    for (int l = c.n_layers - 1; l >= 0; --l) {
        const RpLayerActs& a = acts.layers[static_cast<size_t>(l)];
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Tensor& h_in = l == 0 ? acts.h0 : acts.layers[static_cast<size_t>(l) - 1].h2;

        Tensor dres2 = Tensor::zeros({mrows, c.d_model});
        ln_bwd(c, a.res2, w.p(pre + "ln2_g"), w.p(pre + "ln2_b"), a.ln2_mean, a.ln2_rstd, dh, dres2);

        Tensor dffn_out = dres2;  // alias by copy: residual splits into two paths
        Tensor dffn_act = Tensor::zeros(a.ffn_act.shape);
        site_bwd(a.ffn_act, &m.slot(pre + "d_w.rc"), w.p(pre + "d_w"), w.p(pre + "d_b"),
                 &m.slot(pre + "d_w.cc"), a.d, dffn_out, dffn_act);
        Tensor dffn_pre = Tensor::zeros(a.ffn_pre.shape);
        ops::gelu_backward(a.ffn_pre, dffn_act, dffn_pre);
        Tensor dh1 = dres2;
        site_bwd(a.h1, &m.slot(pre + "u_w.rc"), w.p(pre + "u_w"), w.p(pre + "u_b"),
                 &m.slot(pre + "u_w.cc"), a.u, dffn_pre, dh1);

        Tensor dres1 = Tensor::zeros({mrows, c.d_model});
        ln_bwd(c, a.res1, w.p(pre + "ln1_g"), w.p(pre + "ln1_b"), a.ln1_mean, a.ln1_rstd, dh1, dres1);

        Tensor datt = Tensor::zeros(a.att.shape);
        site_bwd(a.att, &m.slot(pre + "o_w.rc"), w.p(pre + "o_w"), w.p(pre + "o_b"),
                 &m.slot(pre + "o_w.cc"), a.o, dres1, datt);
        Tensor dq = Tensor::zeros(a.q_out.shape);
        Tensor dk = Tensor::zeros(a.k_out.shape);
        Tensor dv = Tensor::zeros(a.v_out.shape);
        kern::attention_backward(a.q_out.ptr(), a.k_out.ptr(), a.v_out.ptr(), a.probs.ptr(),
                                 datt.ptr(), dq.ptr(), dk.ptr(), dv.ptr(),
                                 batch.b, batch.n, c.n_heads, c.head_dim(), c.attn_scale(), causal);
        Tensor dh_in = dres1;
        site_bwd(h_in, &m.slot(pre + "q_w.rc"), w.p(pre + "q_w"), w.p(pre + "q_b"),
                 &m.slot(pre + "q_w.cc"), a.q, dq, dh_in);
        site_bwd(h_in, &m.slot(pre + "k_w.rc"), w.p(pre + "k_w"), w.p(pre + "k_b"),
                 &m.slot(pre + "k_w.cc"), a.k, dk, dh_in);
        site_bwd(h_in, &m.slot(pre + "v_w.rc"), w.p(pre + "v_w"), w.p(pre + "v_b"),
                 &m.slot(pre + "v_w.cc"), a.v, dv, dh_in);
        dh = dh_in;
    }

    Tensor demb_cc = Tensor::zeros({mrows, c.d_model});
    ln_bwd(c, acts.emb_cc_out, w.p("emb_ln_g"), w.p("emb_ln_b"), acts.emb_ln_mean,
           acts.emb_ln_rstd, dh, demb_cc);
    Tensor demb = Tensor::zeros({mrows, c.d_model});
    ops::matmul_backward(acts.emb_sum, m.slot("emb.cc").comp.value, demb_cc, &demb,
                         &m.slot("emb.cc").comp.grad);
    ops::embedding_backward(demb, batch.ids, w.p("tok_emb").grad);
    ops::embedding_backward(demb, position_ids(batch.b, batch.n), w.p("pos_emb").grad);
    if (c.mode == ModelMode::EncoderMLM) {
        std::vector<int32_t> segs = batch.segs;
        if (segs.empty()) segs.assign(static_cast<size_t>(mrows), 0);
        ops::embedding_backward(demb, segs, w.p("seg_emb").grad);
    }
}

double rp_loss(const ReparamModel& m, const Batch& batch, RpActivations& acts, Tensor& dlogits) {
    rp_forward(m, batch, acts);
    dlogits = Tensor::zeros(acts.logits.shape);
    return ops::masked_cross_entropy(acts.logits, batch.targets, dlogits);
}

Tensor penalty_gradient(const Tensor& comp, const std::vector<uint8_t>& mask) {
    if (comp.rank() != 2 || comp.rows() != comp.cols()) throw DimError("penalty_gradient: square input");
    const int n = comp.rows();
    if (static_cast<int>(mask.size()) != n) throw DimError("penalty_gradient: mask size");
    Tensor g = Tensor::zeros(comp.shape);
    for (int j = 0; j < n; ++j) {
        if (!mask[static_cast<size_t>(j)]) continue;
        double sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = comp.at(i, j);
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) continue;
        for (int i = 0; i < n; ++i) g.at(i, j) = static_cast<float>(comp.at(i, j) / norm);
    }
    return g;
}

void fuse_gradients(Tensor& leader_grad, const Tensor& comp, const std::vector<uint8_t>& mask,
                    float penalty_scale) {
    if (!leader_grad.same_shape(comp)) throw DimError("fuse_gradients: shape");
    const Tensor pen = penalty_gradient(comp, mask);
    const int n = comp.rows();
    for (int j = 0; j < n; ++j) {
        if (!mask[static_cast<size_t>(j)]) continue;
        for (int i = 0; i < n; ++i) leader_grad.at(i, j) = penalty_scale * pen.at(i, j);
    }
}

}  // namespace wid
