#include "scen/optim.hpp"

#include <cmath>

namespace scen {

void adam_step(Tensor& param, const Tensor& grad, AdamMoments& state, const AdamHyper& hyper) {
    if (!param.same_shape(grad)) throw ShapeError("adam_step", param.shape_str(), grad.shape_str());
    if (state.m.empty()) {
        state.m = Tensor(param.rows, param.cols);
        state.v = Tensor(param.rows, param.cols);
    } else if (!state.m.same_shape(param)) {
        throw ShapeError("adam_step", param.shape_str(), state.m.shape_str());
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(hyper.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(hyper.beta2), static_cast<double>(state.step));
    const float step_size = static_cast<float>(hyper.lr / bc1);
    const float bc2_sqrt = static_cast<float>(std::sqrt(bc2));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const float g = grad.data[i];
        float& m = state.m.data[i];
        float& v = state.v.data[i];
        m = hyper.beta1 * m + (1.0f - hyper.beta1) * g;
        v = hyper.beta2 * v + (1.0f - hyper.beta2) * g * g;
        const float denom = std::sqrt(v) / bc2_sqrt + hyper.eps;
        param.data[i] -= step_size * m / denom;
    }
}

void Adam::step(const std::map<ParamId, Tensor*>& params, const GradMap& grads) {
    for (const auto& [id, g] : grads) {
        auto it = params.find(id);
        if (it == params.end()) throw Error("adam: no parameter bound to id " + std::to_string(id));
        adam_step(*it->second, g, state_[id], hyper_);
    }
}

}  // namespace scen
