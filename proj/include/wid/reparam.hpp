// Structural re-parameterization: every weight matrix W in the base model is
// wrapped as X @ W_rc @ W @ W_cc with square, identity-initialized row and
// column compactors. Compactors sharing a width (the residual stream, one
// attention block's head width, one FFN's hidden width) form an alignment
// group with a single trained leader; the rest mirror it, transposed for row
// slots. Shrinking happens later by deleting decayed compactor columns.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "wid/model.hpp"
#include "wid/tensor.hpp"

namespace wid {

enum class SlotKind { Row, Column };
// how a slot's compactor derives from its group leader
enum class TieMode { Duplicate, Flip };
enum class GradientPolicy { LeaderOnly, TiedSum };
enum class Strategy { DimReduce, HeadDrop };

struct Slot {
    std::string site;  // which base weight this wraps, e.g. "layer0.q_w"
    SlotKind kind = SlotKind::Column;
    TieMode tie = TieMode::Duplicate;
    int group = -1;
    bool leader = false;
    Parameter comp;  // [dim, dim]
};

struct AlignmentGroup {
    std::string name;  // "width", "attn0".., "ffn0"..
    int dim = 0;
    int leader = -1;            // slot index
    std::vector<int> members;   // all slot indices, leader first
    int block = 0;              // head width for attention groups, 0 otherwise
    // progressive mask state: mask[i] == 1 marks a dimension scheduled to die
    std::vector<uint8_t> mask;
    int k = 0;           // scheduled drop count so far
    int drop = 0;        // final number of dimensions to drop
    int increment = 1;   // k step per schedule event
};

struct ReparamModel {
    ModelWeights base;
    std::vector<Slot> slots;
    std::vector<AlignmentGroup> groups;
    std::unordered_map<std::string, int> slot_index;  // "site.rc" / "site.cc" -> slot

    Slot& slot(const std::string& key);
    const Slot& slot(const std::string& key) const;
    int group_index(const std::string& name) const;

    // teacher weights move in; compactors start as identities
    static ReparamModel wrap(ModelWeights teacher);

    // base parameters plus one compactor parameter per group leader
    std::vector<Parameter*> trainable_params();
    void zero_grads();
};

struct RpSiteActs {
    Tensor xr;  // x @ rc
    Tensor yw;  // xr @ w + b
};

struct RpLayerActs {
    RpSiteActs q, k, v, o, u, d;
    Tensor q_out, k_out, v_out;  // post column compactor
    Tensor probs, att;
    Tensor att_proj;
    Tensor res1, ln1_mean, ln1_rstd, h1;
    Tensor ffn_pre, ffn_act, ffn_out;
    Tensor res2, ln2_mean, ln2_rstd, h2;
};

struct RpActivations {
    int b = 0, n = 0;
    Tensor emb_sum;     // before the embedding column compactor
    Tensor emb_cc_out;  // after it
    Tensor emb_ln_mean, emb_ln_rstd, h0;
    std::vector<RpLayerActs> layers;
    Tensor out_hr;  // h_last @ output row compactor
    Tensor logits;
};

void rp_forward(const ReparamModel& m, const Batch& batch, RpActivations& acts);
void rp_backward(ReparamModel& m, const Batch& batch, const RpActivations& acts, const Tensor& dlogits);
double rp_loss(const ReparamModel& m, const Batch& batch, RpActivations& acts, Tensor& dlogits);

// Gradient of the sum of masked-column L2 norms of a leader compactor:
// column j gets comp[:,j] / ||comp[:,j]|| when mask[j] is set, zero otherwise.
// Columns with norm below 1e-12 stay zero.
Tensor penalty_gradient(const Tensor& comp, const std::vector<uint8_t>& mask);

// Replaces masked columns of the leader gradient with penalty_scale times the
// penalty gradient; unmasked columns keep the task gradient untouched.
void fuse_gradients(Tensor& leader_grad, const Tensor& comp, const std::vector<uint8_t>& mask,
                    float penalty_scale);

}  // namespace wid
