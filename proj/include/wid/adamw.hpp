#pragma once

#include <cstdint>
#include <vector>

#include "wid/tensor.hpp"

namespace wid {

struct OptimConfig {
    float lr_base = 1e-6f;
    float lr_compactor = 5e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.99f;
    float eps = 1e-8f;
    float weight_decay_base = 0.01f;
    float weight_decay_compactor = 0.0f;
    int warmup_steps = 0;  // linear ramp from 0 when > 0
};

// Decoupled AdamW over a fixed set of parameters. Base weights and compactor
// weights get separate learning rates and weight decay.
class AdamW {
  public:
    explicit AdamW(OptimConfig cfg) : cfg_(cfg) {}

    // registers the parameters and allocates moment buffers; call once
    void attach(std::vector<Parameter*> params);

    void step();

    int64_t step_count() const { return step_; }
    void set_step_count(int64_t s) { step_ = s; }
    const OptimConfig& config() const { return cfg_; }

    // moment buffers, index-parallel to the attached parameter list
    std::vector<Tensor>& moment1() { return m_; }
    std::vector<Tensor>& moment2() { return v_; }
    const std::vector<Tensor>& moment1() const { return m_; }
    const std::vector<Tensor>& moment2() const { return v_; }
    const std::vector<Parameter*>& params() const { return params_; }

  private:
    OptimConfig cfg_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

}  // namespace wid
