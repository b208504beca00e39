#include "trainer/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace morphsdf {

using ad::Tensor;

bool adam_step(std::vector<ParamUpdate>& updates, AdamState& state) {
    std::unordered_set<std::string> seen;
    for (const ParamUpdate& u : updates) {
        if (u.param == nullptr) throw std::invalid_argument("adam_step: null parameter " + u.name);
        if (!same_shape(*u.param, u.grad))
            throw std::invalid_argument("adam_step: gradient shape " + u.grad.shape_str() +
                                        " does not match parameter " + u.name + " " +
                                        u.param->shape_str());
        if (!(u.lr >= 0.f) || !std::isfinite(u.lr))
            throw std::invalid_argument("adam_step: bad learning rate for " + u.name);
        if (!seen.insert(u.name).second)
            throw std::invalid_argument("adam_step: duplicate parameter " + u.name);
    }

    for (const ParamUpdate& u : updates)
        for (float g : u.grad.data())
            if (!std::isfinite(g)) {
                ++state.skipped;
                return false;
            }

    ++state.step;
    const double b1 = double(state.cfg.beta1), b2 = double(state.cfg.beta2);
    const double bc1 = 1.0 - std::pow(b1, double(state.step));
    const double bc2 = 1.0 - std::pow(b2, double(state.step));
    for (ParamUpdate& u : updates) {
        AdamSlot& slot = state.slots[u.name];
        if (!slot.m.defined()) {
            slot.m = Tensor::zeros(u.param->shape());
            slot.v = Tensor::zeros(u.param->shape());
        } else if (!same_shape(slot.m, *u.param)) {
            throw std::invalid_argument("adam_step: stale moment shape for " + u.name);
        }
        std::span<float> m = slot.m.mutable_data();
        std::span<float> v = slot.v.mutable_data();
        std::span<float> p = u.param->mutable_data();
        std::span<const float> g = u.grad.data();
        const float beta1 = state.cfg.beta1, beta2 = state.cfg.beta2;
        const float eps = state.cfg.eps;
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.f - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.f - beta2) * g[i] * g[i];
            float m_hat = float(double(m[i]) / bc1);
            float v_hat = float(double(v[i]) / bc2);
            p[i] -= u.lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
    return true;
}

}  // namespace morphsdf
