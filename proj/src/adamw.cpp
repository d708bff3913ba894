#include "wid/adamw.hpp"

#include "wid/common.hpp"
#include "wid/kernels.hpp"

namespace wid {

void AdamW::attach(std::vector<Parameter*> params) {
    if (!params_.empty()) throw StateError("AdamW::attach called twice");
    params_ = std::move(params);
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape));
        v_.push_back(Tensor::zeros(p->value.shape));
    }
}

void AdamW::step() {
    if (params_.empty()) throw StateError("AdamW::step before attach");
    ++step_;
    float ramp = 1.0f;
    if (cfg_.warmup_steps > 0 && step_ <= cfg_.warmup_steps)
        ramp = static_cast<float>(step_) / static_cast<float>(cfg_.warmup_steps);
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        const bool comp = p->group == ParamGroup::Compactor;
        const float lr = ramp * (comp ? cfg_.lr_compactor : cfg_.lr_base);
        const float wd = comp ? cfg_.weight_decay_compactor : cfg_.weight_decay_base;
        kern::adamw_update(p->value.ptr(), p->grad.ptr(), m_[i].ptr(), v_[i].ptr(),
                           p->value.numel(), lr, cfg_.beta1, cfg_.beta2, cfg_.eps, wd, step_);
    }
}

}  // namespace wid
