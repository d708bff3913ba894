// Folding trained compactors into the base weights. Column slots keep the
// unmasked columns of their compactor, row slots the unmasked rows, and each
// weight becomes rc' @ W @ cc'. Biases fold through the column compactor,
// layer norms keep the surviving coordinates; only the deleted (decayed)
// columns are lost, and their remaining mass is reported, not hidden.
#pragma once

#include <string>
#include <vector>

#include "wid/reparam.hpp"

namespace wid {

struct MergeReport {
    std::vector<std::string> slot_names;
    std::vector<double> dropped_norm;  // leftover mass of deleted rows/columns per slot
    double total_dropped = 0.0;
    // per layer: which teacher head each student head came from
    std::vector<std::vector<int>> head_map;
};

std::vector<int> kept_indices(const std::vector<uint8_t>& mask);

// [n, n_kept] for column slots, [n_kept, n] for row slots
Tensor compress_compactor(const Tensor& comp, const std::vector<uint8_t>& mask, SlotKind kind);

// rc' @ w @ cc', either side optional
Tensor merge_linear(const Tensor* rc, const Tensor& w, const Tensor* cc);
Tensor merge_bias(const Tensor& bias, const Tensor& cc);
// kept-coordinate selection of a layer-norm parameter vector
Tensor merge_layernorm_param(const Tensor& v, const std::vector<uint8_t>& mask);

// surviving whole blocks of an attention mask (HeadDrop head bookkeeping)
std::vector<int> kept_blocks(const std::vector<uint8_t>& mask, int block);

// merges everything into a free-standing student; the student inherits the
// teacher's attention scale so both forwards stay comparable
ModelWeights build_student(const ReparamModel& m, Strategy strategy, MergeReport& report);

}  // namespace wid
