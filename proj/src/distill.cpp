#include "wid/distill.hpp"

#include <algorithm>
#include <cmath>

#include "wid/alignment.hpp"
#include "wid/common.hpp"

namespace wid {

namespace {

std::vector<double> column_norms(const Tensor& w) {
    const int n = w.cols();
    std::vector<double> norms(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < w.rows(); ++i)
        for (int j = 0; j < n; ++j) {
            const double v = w.at(i, j);
            norms[static_cast<size_t>(j)] += v * v;
        }
    for (double& v : norms) v = std::sqrt(v);
    return norms;
}

// indices of the k smallest values, ties toward the lower index
std::vector<int> k_smallest(const std::vector<double>& vals, const std::vector<int>& candidates, int k) {
    std::vector<int> order = candidates;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return vals[static_cast<size_t>(a)] < vals[static_cast<size_t>(b)];
    });
    order.resize(static_cast<size_t>(k));
    return order;
}

int popcount(const std::vector<uint8_t>& mask) {
    int c = 0;
    for (uint8_t v : mask) c += v != 0;
    return c;
}

}  // namespace

std::vector<uint8_t> select_mask(const Tensor& leader, int k, int block, Strategy strategy) {
    const int n = leader.cols();
    if (k < 0 || k > n) throw ConfigError("select_mask: k out of range");
    std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
    if (k == 0) return mask;
    const std::vector<double> norms = column_norms(leader);

    if (block <= 0) {
        std::vector<int> all(static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) all[static_cast<size_t>(j)] = j;
        for (int j : k_smallest(norms, all, k)) mask[static_cast<size_t>(j)] = 1;
        return mask;
    }

    if (n % block != 0) throw ConfigError("select_mask: width not divisible by block");
    const int nblocks = n / block;
    if (strategy == Strategy::HeadDrop) {
        std::vector<double> score(static_cast<size_t>(nblocks), 0.0);
        for (int bidx = 0; bidx < nblocks; ++bidx)
            for (int j = 0; j < block; ++j)
                score[static_cast<size_t>(bidx)] += norms[static_cast<size_t>(bidx * block + j)];
        std::vector<int> blocks(static_cast<size_t>(nblocks));
        for (int bidx = 0; bidx < nblocks; ++bidx) blocks[static_cast<size_t>(bidx)] = bidx;
        const int ndrop = k / block;  // partial blocks wait for the next event
        for (int bidx : k_smallest(score, blocks, ndrop))
            for (int j = 0; j < block; ++j) mask[static_cast<size_t>(bidx * block + j)] = 1;
        return mask;
    }

    // DimReduce: the same quota inside every head block
    const int quota = k / nblocks;
    for (int bidx = 0; bidx < nblocks; ++bidx) {
        std::vector<int> cand(static_cast<size_t>(block));
        for (int j = 0; j < block; ++j) cand[static_cast<size_t>(j)] = bidx * block + j;
        for (int j : k_smallest(norms, cand, quota)) mask[static_cast<size_t>(j)] = 1;
    }
    return mask;
}

void configure_schedule(ReparamModel& m, const DistillConfig& cfg) {
    const ModelConfig& c = m.base.cfg;
    const DistillTargets& t = cfg.target;
    if (t.d < 1 || t.ff < 1 || t.inner() < 1) throw ConfigError("distill targets must be positive");
    if (t.d > c.d_model || t.ff > c.d_ff || t.inner() > c.inner())
        throw ConfigError("distill targets larger than the teacher");
    if (cfg.events < 1) throw ConfigError("schedule needs at least one event");

    const int attn_drop = c.inner() - t.inner();
    if (cfg.strategy == Strategy::HeadDrop && attn_drop % c.head_dim() != 0)
        throw ConfigError("HeadDrop target must remove whole heads of width " +
                          std::to_string(c.head_dim()));
    if (cfg.strategy == Strategy::DimReduce && attn_drop % c.n_heads != 0)
        throw ConfigError("DimReduce target must cut every head equally");

    for (AlignmentGroup& g : m.groups) {
        if (g.name == "width")
            g.drop = c.d_model - t.d;
        else if (g.name.rfind("attn", 0) == 0)
            g.drop = attn_drop;
        else
            g.drop = c.d_ff - t.ff;
        g.increment = std::max(1, g.drop / cfg.events);
        g.k = 0;
        g.mask.assign(static_cast<size_t>(g.dim), 0);
    }
}

bool schedule_event(ReparamModel& m, const DistillConfig& cfg, int64_t step) {
    if (cfg.interval < 1) throw ConfigError("schedule interval must be >= 1");
    if (step % cfg.interval != 0) return false;
    bool changed = false;
    for (AlignmentGroup& g : m.groups) {
        if (popcount(g.mask) >= g.drop) continue;
        const Tensor& leader = m.slots[static_cast<size_t>(g.leader)].comp.value;
        std::vector<uint8_t> next = select_mask(leader, g.k, g.block, cfg.strategy);
        if (next != g.mask) changed = true;
        g.mask = std::move(next);
        g.k = std::min(g.k + g.increment, g.drop);
    }
    return changed;
}

std::vector<GroupStat> group_stats(const ReparamModel& m) {
    std::vector<GroupStat> out;
    out.reserve(m.groups.size());
    for (const AlignmentGroup& g : m.groups) {
        GroupStat s;
        s.name = g.name;
        s.k = g.k;
        s.popcount = popcount(g.mask);
        const Tensor& leader = m.slots[static_cast<size_t>(g.leader)].comp.value;
        for (int j = 0; j < g.dim; ++j) {
            if (!g.mask[static_cast<size_t>(j)]) continue;
            double sq = 0.0;
            for (int i = 0; i < g.dim; ++i) {
                const double v = leader.at(i, j);
                sq += v * v;
            }
            s.dropped_norm += std::sqrt(sq);
        }
        out.push_back(std::move(s));
    }
    return out;
}

StepStats distill_step(ReparamModel& m, AdamW& opt, const Batch& batch,
                       const DistillConfig& cfg, int64_t step) {
    schedule_event(m, cfg, step);
    m.zero_grads();
    RpActivations acts;
    Tensor dlogits;
    StepStats stats;
    stats.loss = rp_loss(m, batch, acts, dlogits);
    rp_backward(m, batch, acts, dlogits);
    fold_member_grads(m, cfg.policy);
    for (AlignmentGroup& g : m.groups) {
        Slot& leader = m.slots[static_cast<size_t>(g.leader)];
        fuse_gradients(leader.comp.grad, leader.comp.value, g.mask, cfg.penalty_scale);
    }
    opt.step();
    broadcast_leaders(m);
    stats.groups = group_stats(m);
    return stats;
}

}  // namespace wid
