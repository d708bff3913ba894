// The compaction trainer: a progressive mask schedule picks which compactor
// columns must die, a column-norm penalty replaces the task gradient on those
// columns, and AdamW runs over base weights plus group-leader compactors.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wid/adamw.hpp"
#include "wid/reparam.hpp"

namespace wid {

struct DistillTargets {
    int d = 0;           // student residual width
    int attn_inner = 0;  // student attention width, 0 = same as d
    int ff = 0;          // student FFN hidden width
    int inner() const { return attn_inner > 0 ? attn_inner : d; }
};

struct DistillConfig {
    DistillTargets target;
    Strategy strategy = Strategy::DimReduce;
    GradientPolicy policy = GradientPolicy::LeaderOnly;
    int interval = 500;          // steps between schedule events
    int events = 16;             // schedule length: increment = max(1, drop/events)
    float penalty_scale = 1.0f;
    OptimConfig optim;
};

// writes drop/increment into every group and validates the targets against
// the strategy (whole-head divisibility for HeadDrop, equal per-head quota
// for DimReduce)
void configure_schedule(ReparamModel& m, const DistillConfig& cfg);

// Lowest-column-norm selection of k dimensions of a leader compactor. block
// is the head width for attention groups (0 elsewhere): HeadDrop masks whole
// blocks by summed norm, DimReduce masks floor(k/blocks) columns inside every
// block. Ties break toward the lower index.
std::vector<uint8_t> select_mask(const Tensor& leader, int k, int block, Strategy strategy);

// At step % interval == 0, every group that has not reached its drop target
// re-selects its mask at the current k and then advances k by its increment.
// Returns true if any mask changed.
bool schedule_event(ReparamModel& m, const DistillConfig& cfg, int64_t step);

struct GroupStat {
    std::string name;
    int k = 0;
    int popcount = 0;
    double dropped_norm = 0.0;  // sum of masked-column norms of the leader
};

struct StepStats {
    double loss = 0.0;
    std::vector<GroupStat> groups;
};

// One full training step: schedule event, forward/backward, gradient folding
// and fusion, optimizer update, leader broadcast.
StepStats distill_step(ReparamModel& m, AdamW& opt, const Batch& batch,
                       const DistillConfig& cfg, int64_t step);

// group summaries without training (for logging/tests)
std::vector<GroupStat> group_stats(const ReparamModel& m);

}  // namespace wid
