#include "wid/alignment.hpp"

#include <cmath>

#include "wid/common.hpp"
#include "wid/kernels.hpp"

namespace wid {

namespace {

int slot_at(const ReparamModel& m, const std::string& key) {
    auto it = m.slot_index.find(key);
    if (it == m.slot_index.end()) throw IndexError("build_groups: missing slot " + key);
    return it->second;
}

void join(ReparamModel& m, AlignmentGroup& g, const std::string& key, TieMode tie, bool leader) {
    const int idx = slot_at(m, key);
    Slot& s = m.slots[static_cast<size_t>(idx)];
    if (s.comp.value.rows() != g.dim)
        throw DimError("build_groups: slot " + key + " width " + std::to_string(s.comp.value.rows()) +
                       " does not match group " + g.name);
    s.group = static_cast<int>(&g - m.groups.data());
    s.tie = tie;
    s.leader = leader;
    if (leader) {
        if (g.leader >= 0) throw StateError("build_groups: two leaders in " + g.name);
        g.leader = idx;
        g.members.insert(g.members.begin(), idx);
    } else {
        g.members.push_back(idx);
    }
}

}  // namespace

void build_groups(ReparamModel& m) {
    const ModelConfig& c = m.base.cfg;
    m.groups.clear();
    m.groups.reserve(static_cast<size_t>(2 * c.n_layers + 1));

    {
        AlignmentGroup g;
        g.name = "width";
        g.dim = c.d_model;
        g.mask.assign(static_cast<size_t>(g.dim), 0);
        m.groups.push_back(std::move(g));
    }
    for (int l = 0; l < c.n_layers; ++l) {
        AlignmentGroup g;
        g.name = "attn" + std::to_string(l);
        g.dim = c.inner();
        g.block = c.head_dim();
        g.mask.assign(static_cast<size_t>(g.dim), 0);
        m.groups.push_back(std::move(g));
    }
    for (int l = 0; l < c.n_layers; ++l) {
        AlignmentGroup g;
        g.name = "ffn" + std::to_string(l);
        g.dim = c.d_ff;
        g.mask.assign(static_cast<size_t>(g.dim), 0);
        m.groups.push_back(std::move(g));
    }

    AlignmentGroup& width = m.groups[0];
    join(m, width, "emb.cc", TieMode::Duplicate, true);
    join(m, width, "out.rc", TieMode::Flip, false);
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        join(m, width, pre + "q_w.rc", TieMode::Flip, false);
        join(m, width, pre + "k_w.rc", TieMode::Flip, false);
        join(m, width, pre + "v_w.rc", TieMode::Flip, false);
        join(m, width, pre + "u_w.rc", TieMode::Flip, false);
        join(m, width, pre + "o_w.cc", TieMode::Duplicate, false);
        join(m, width, pre + "d_w.cc", TieMode::Duplicate, false);

        AlignmentGroup& attn = m.groups[static_cast<size_t>(1 + l)];
        join(m, attn, pre + "v_w.cc", TieMode::Duplicate, true);
        join(m, attn, pre + "q_w.cc", TieMode::Duplicate, false);
        join(m, attn, pre + "k_w.cc", TieMode::Duplicate, false);
        join(m, attn, pre + "o_w.rc", TieMode::Flip, false);

        AlignmentGroup& ffn = m.groups[static_cast<size_t>(1 + c.n_layers + l)];
        join(m, ffn, pre + "u_w.cc", TieMode::Duplicate, true);
        join(m, ffn, pre + "d_w.rc", TieMode::Flip, false);
    }

    for (const Slot& s : m.slots)
        if (s.group < 0) throw StateError("build_groups: slot " + s.comp.name + " left ungrouped");
}

void broadcast_leaders(ReparamModel& m) {
    for (const AlignmentGroup& g : m.groups) {
        const Tensor& lead = m.slots[static_cast<size_t>(g.leader)].comp.value;
        for (int idx : g.members) {
            if (idx == g.leader) continue;
            Slot& s = m.slots[static_cast<size_t>(idx)];
            if (s.tie == TieMode::Duplicate)
                kern::copy(s.comp.value.ptr(), lead.ptr(), lead.numel());
            else
                kern::transpose(lead.ptr(), s.comp.value.ptr(), lead.rows(), lead.cols());
        }
    }
}

void fold_member_grads(ReparamModel& m, GradientPolicy policy) {
    if (policy == GradientPolicy::LeaderOnly) return;
    for (const AlignmentGroup& g : m.groups) {
        Tensor sum = Tensor::zeros({g.dim, g.dim});
        Tensor scratch = Tensor::zeros({g.dim, g.dim});
        for (int idx : g.members) {
            const Slot& s = m.slots[static_cast<size_t>(idx)];
            if (s.tie == TieMode::Flip) {
                kern::transpose(s.comp.grad.ptr(), scratch.ptr(), g.dim, g.dim);
                kern::add_inplace(sum.ptr(), scratch.ptr(), sum.numel());
            } else {
                kern::add_inplace(sum.ptr(), s.comp.grad.ptr(), sum.numel());
            }
        }
        m.slots[static_cast<size_t>(g.leader)].comp.grad = std::move(sum);
    }
}

float alignment_residual(const ReparamModel& m) {
    float worst = 0.0f;
    for (const AlignmentGroup& g : m.groups) {
        const Tensor& lead = m.slots[static_cast<size_t>(g.leader)].comp.value;
        for (int idx : g.members) {
            if (idx == g.leader) continue;
            const Slot& s = m.slots[static_cast<size_t>(idx)];
            for (int i = 0; i < g.dim; ++i) {
                for (int j = 0; j < g.dim; ++j) {
                    const float want = s.tie == TieMode::Flip ? lead.at(j, i) : lead.at(i, j);
                    const float diff = std::fabs(s.comp.value.at(i, j) - want);
                    if (diff > worst) worst = diff;
                }
            }
        }
    }
    return worst;
}

}  // namespace wid
