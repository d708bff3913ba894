#include "wid/merge.hpp"

#include <cmath>

#include "wid/common.hpp"
#include "wid/ops.hpp"

namespace wid {

std::vector<int> kept_indices(const std::vector<uint8_t>& mask) {
    std::vector<int> keep;
    keep.reserve(mask.size());
    for (size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) keep.push_back(static_cast<int>(i));
    return keep;
}

Tensor compress_compactor(const Tensor& comp, const std::vector<uint8_t>& mask, SlotKind kind) {
    if (comp.rank() != 2 || comp.rows() != comp.cols()) throw DimError("compress_compactor: square input");
    const int n = comp.rows();
    if (static_cast<int>(mask.size()) != n) throw DimError("compress_compactor: mask size");
    const std::vector<int> keep = kept_indices(mask);
    const int ns = static_cast<int>(keep.size());
    if (ns == 0) throw ConfigError("compress_compactor: nothing kept");
    if (kind == SlotKind::Column) {
        Tensor out = Tensor::zeros({n, ns});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ns; ++j) out.at(i, j) = comp.at(i, keep[static_cast<size_t>(j)]);
        return out;
    }
    Tensor out = Tensor::zeros({ns, n});
    for (int i = 0; i < ns; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = comp.at(keep[static_cast<size_t>(i)], j);
    return out;
}

Tensor merge_linear(const Tensor* rc, const Tensor& w, const Tensor* cc) {
    Tensor tmp = rc ? ops::matmul(*rc, w) : w;
    return cc ? ops::matmul(tmp, *cc) : tmp;
}

Tensor merge_bias(const Tensor& bias, const Tensor& cc) {
    if (static_cast<int>(bias.numel()) != cc.rows()) throw DimError("merge_bias: size");
    Tensor row({1, cc.rows()}, bias.data);
    Tensor out = ops::matmul(row, cc);
    return Tensor({cc.cols()}, std::move(out.data));
}

Tensor merge_layernorm_param(const Tensor& v, const std::vector<uint8_t>& mask) {
    if (v.numel() != mask.size()) throw DimError("merge_layernorm_param: size");
    const std::vector<int> keep = kept_indices(mask);
    Tensor out = Tensor::zeros({static_cast<int>(keep.size())});
    for (size_t i = 0; i < keep.size(); ++i)
        out.data[i] = v.data[static_cast<size_t>(keep[i])];
    return out;
}

std::vector<int> kept_blocks(const std::vector<uint8_t>& mask, int block) {
    if (block < 1 || mask.size() % static_cast<size_t>(block) != 0)
        throw DimError("kept_blocks: bad block width");
    std::vector<int> out;
    for (size_t b = 0; b < mask.size() / static_cast<size_t>(block); ++b) {
        bool any = false;
        for (int j = 0; j < block; ++j) any = any || mask[b * static_cast<size_t>(block) + j];
        if (!any) out.push_back(static_cast<int>(b));
    }
    return out;
}

namespace {

double dropped_mass(const Tensor& comp, const std::vector<uint8_t>& mask, SlotKind kind) {
    double sq = 0.0;
    const int n = comp.rows();
    for (int idx = 0; idx < n; ++idx) {
        if (!mask[static_cast<size_t>(idx)]) continue;
        for (int other = 0; other < n; ++other) {
            const float v = kind == SlotKind::Column ? comp.at(other, idx) : comp.at(idx, other);
            sq += static_cast<double>(v) * v;
        }
    }
    return std::sqrt(sq);
}

struct SlotMerge {
    const ReparamModel& m;
    MergeReport& report;

    // compressed compactor for a slot, using its group's mask
    Tensor operator()(const std::string& key) {
        const Slot& s = m.slot(key);
        const std::vector<uint8_t>& mask = m.groups[static_cast<size_t>(s.group)].mask;
        report.slot_names.push_back(key);
        const double dm = dropped_mass(s.comp.value, mask, s.kind);
        report.dropped_norm.push_back(dm);
        report.total_dropped += dm;
        return compress_compactor(s.comp.value, mask, s.kind);
    }
};

}  // namespace

ModelWeights build_student(const ReparamModel& m, Strategy strategy, MergeReport& report) {
    const ModelConfig& tc = m.base.cfg;
    const AlignmentGroup& width = m.groups[static_cast<size_t>(m.group_index("width"))];
    const int d_s = static_cast<int>(kept_indices(width.mask).size());

    // every attention group must keep the same count, same for FFN groups
    int inner_s = -1, ff_s = -1, heads_s = tc.n_heads;
    std::vector<std::vector<int>> block_survivors;
    for (int l = 0; l < tc.n_layers; ++l) {
        const AlignmentGroup& ag = m.groups[static_cast<size_t>(m.group_index("attn" + std::to_string(l)))];
        const AlignmentGroup& fg = m.groups[static_cast<size_t>(m.group_index("ffn" + std::to_string(l)))];
        const int ai = static_cast<int>(kept_indices(ag.mask).size());
        const int fi = static_cast<int>(kept_indices(fg.mask).size());
        if (inner_s < 0) inner_s = ai;
        if (ff_s < 0) ff_s = fi;
        if (ai != inner_s || fi != ff_s)
            throw StateError("build_student: layer " + std::to_string(l) +
                             " kept a different width than layer 0");
        if (strategy == Strategy::HeadDrop) {
            // masks must cover whole head blocks
            for (int b = 0; b < tc.n_heads; ++b) {
                int cnt = 0;
                for (int j = 0; j < tc.head_dim(); ++j)
                    cnt += ag.mask[static_cast<size_t>(b * tc.head_dim() + j)] != 0;
                if (cnt != 0 && cnt != tc.head_dim())
                    throw StateError("build_student: partial head block under HeadDrop");
            }
            block_survivors.push_back(kept_blocks(ag.mask, tc.head_dim()));
        } else {
            // equal survivors per head block so the student heads stay uniform
            int first = -1;
            for (int b = 0; b < tc.n_heads; ++b) {
                int cnt = 0;
                for (int j = 0; j < tc.head_dim(); ++j)
                    cnt += ag.mask[static_cast<size_t>(b * tc.head_dim() + j)] == 0;
                if (first < 0) first = cnt;
                if (cnt != first)
                    throw StateError("build_student: uneven per-head survivors under DimReduce");
            }
            std::vector<int> all(static_cast<size_t>(tc.n_heads));
            for (int b = 0; b < tc.n_heads; ++b) all[static_cast<size_t>(b)] = b;
            block_survivors.push_back(std::move(all));
        }
    }
    if (strategy == Strategy::HeadDrop) heads_s = static_cast<int>(block_survivors[0].size());
    for (const auto& bs : block_survivors)
        if (static_cast<int>(bs.size()) != static_cast<int>(block_survivors[0].size()))
            throw StateError("build_student: layers kept different head counts");

    ModelConfig sc = tc;
    sc.d_model = d_s;
    sc.n_heads = heads_s;
    sc.d_ff = ff_s;
    sc.attn_inner = inner_s;
    sc.scale_dk = tc.scale_dk > 0 ? tc.scale_dk : tc.head_dim();
    sc.validate();

    ModelWeights out = ModelWeights::shell(sc);
    report = MergeReport{};
    report.head_map = block_survivors;
    SlotMerge cut{m, report};

    const Tensor emb_cc = cut("emb.cc");
    out.p("tok_emb").value = merge_linear(nullptr, m.base.p("tok_emb").value, &emb_cc);
    out.p("pos_emb").value = merge_linear(nullptr, m.base.p("pos_emb").value, &emb_cc);
    if (tc.mode == ModelMode::EncoderMLM)
        out.p("seg_emb").value = merge_linear(nullptr, m.base.p("seg_emb").value, &emb_cc);
    out.p("emb_ln_g").value = merge_layernorm_param(m.base.p("emb_ln_g").value, width.mask);
    out.p("emb_ln_b").value = merge_layernorm_param(m.base.p("emb_ln_b").value, width.mask);

    for (int l = 0; l < tc.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Tensor q_rc = cut(pre + "q_w.rc"), q_cc = cut(pre + "q_w.cc");
        const Tensor k_rc = cut(pre + "k_w.rc"), k_cc = cut(pre + "k_w.cc");
        const Tensor v_rc = cut(pre + "v_w.rc"), v_cc = cut(pre + "v_w.cc");
        const Tensor o_rc = cut(pre + "o_w.rc"), o_cc = cut(pre + "o_w.cc");
        const Tensor u_rc = cut(pre + "u_w.rc"), u_cc = cut(pre + "u_w.cc");
        const Tensor d_rc = cut(pre + "d_w.rc"), d_cc = cut(pre + "d_w.cc");
        out.p(pre + "q_w").value = merge_linear(&q_rc, m.base.p(pre + "q_w").value, &q_cc);
        out.p(pre + "q_b").value = merge_bias(m.base.p(pre + "q_b").value, q_cc);
        out.p(pre + "k_w").value = merge_linear(&k_rc, m.base.p(pre + "k_w").value, &k_cc);
        out.p(pre + "k_b").value = merge_bias(m.base.p(pre + "k_b").value, k_cc);
        out.p(pre + "v_w").value = merge_linear(&v_rc, m.base.p(pre + "v_w").value, &v_cc);
        out.p(pre + "v_b").value = merge_bias(m.base.p(pre + "v_b").value, v_cc);
        out.p(pre + "o_w").value = merge_linear(&o_rc, m.base.p(pre + "o_w").value, &o_cc);
        out.p(pre + "o_b").value = merge_bias(m.base.p(pre + "o_b").value, o_cc);
        out.p(pre + "u_w").value = merge_linear(&u_rc, m.base.p(pre + "u_w").value, &u_cc);
        out.p(pre + "u_b").value = merge_bias(m.base.p(pre + "u_b").value, u_cc);
        out.p(pre + "d_w").value = merge_linear(&d_rc, m.base.p(pre + "d_w").value, &d_cc);
        out.p(pre + "d_b").value = merge_bias(m.base.p(pre + "d_b").value, d_cc);
        const AlignmentGroup& wg = width;
        out.p(pre + "ln1_g").value = merge_layernorm_param(m.base.p(pre + "ln1_g").value, wg.mask);
        out.p(pre + "ln1_b").value = merge_layernorm_param(m.base.p(pre + "ln1_b").value, wg.mask);
        out.p(pre + "ln2_g").value = merge_layernorm_param(m.base.p(pre + "ln2_g").value, wg.mask);
        out.p(pre + "ln2_b").value = merge_layernorm_param(m.base.p(pre + "ln2_b").value, wg.mask);
    }

    // the tied output head rides on the merged embedding; only its bias stays
    out.p("out_b").value = m.base.p("out_b").value;
    {
        const Slot& s = m.slot("out.rc");
        report.slot_names.push_back("out.rc");
        const double dm = dropped_mass(s.comp.value, width.mask, s.kind);
        report.dropped_norm.push_back(dm);
        report.total_dropped += dm;
    }
    return out;
}

}  // namespace wid
