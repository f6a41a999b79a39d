#pragma once

#include <map>
#include <vector>

#include "scen/autodiff.hpp"

namespace scen {

struct AdamHyper {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamMoments {
    Tensor m;
    Tensor v;
    long step = 0;
};

// One Adam update of `param` in place. Fresh moments (empty tensors) are
// allocated on first use.
void adam_step(Tensor& param, const Tensor& grad, AdamMoments& state, const AdamHyper& hyper);

// Adam over a set of parameters addressed by ParamId.
class Adam {
   public:
    explicit Adam(AdamHyper hyper) : hyper_(hyper) {}

    // params[id] must exist for every id present in grads.
    void step(const std::map<ParamId, Tensor*>& params, const GradMap& grads);

    const AdamHyper& hyper() const { return hyper_; }
    void set_lr(float lr) { hyper_.lr = lr; }

   private:
    AdamHyper hyper_;
    std::map<ParamId, AdamMoments> state_;
};

}  // namespace scen
