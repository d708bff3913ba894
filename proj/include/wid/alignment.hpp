// Alignment-group construction and maintenance. Groups tie the compactors
// that act on one shared width so that every member keeps exactly the same
// surviving dimensions: the residual-stream group spans the embedding
// compactor, all attention/FFN input row slots and output column slots plus
// the tied output head; each attention block and each FFN hidden layer gets
// its own group.
#pragma once

#include "wid/reparam.hpp"

namespace wid {

// builds m.groups and the slot group/leader/tie annotations
void build_groups(ReparamModel& m);

// copies every leader's weights onto its members (transposed for row slots);
// call after init and after each optimizer step
void broadcast_leaders(ReparamModel& m);

// prepares leader gradients according to the policy: LeaderOnly keeps the
// leader slot's own gradient, TiedSum overwrites it with the sum over all
// member slots (flipped members contribute their transpose)
void fold_member_grads(ReparamModel& m, GradientPolicy policy);

// largest absolute difference between any member and its leader (after
// orientation), zero when perfectly aligned
float alignment_residual(const ReparamModel& m);

}  // namespace wid
