#include "dub/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace dub {

AdamState::AdamState(AdamConfig config, std::span<const Tensor> params) : config_(config) {
    if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("Adam learning rate must be > 0");
    if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
        throw std::invalid_argument("Adam betas must lie in [0,1)");
    }
    for (const Tensor& p : params) {
        first_.emplace_back(p.shape());
        second_.emplace_back(p.shape());
        steps_.push_back(0);
    }
}

void AdamState::update(std::size_t slot, Tensor& param, const Tensor& grad) {
    if (slot >= first_.size()) throw std::invalid_argument("Adam slot out of range");
    Tensor& m = first_[slot];
    Tensor& v = second_[slot];
    if (param.shape() != m.shape() || grad.shape() != m.shape()) {
        throw std::invalid_argument("Adam shape mismatch for slot " + std::to_string(slot) + ": param " +
                                    shape_string(param.shape()) + " grad " + shape_string(grad.shape()) +
                                    " state " + shape_string(m.shape()));
    }
    const std::int64_t t = ++steps_[slot];
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double gi = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        param[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
}

void adam_step(std::span<const std::size_t> slots, std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state) {
    if (slots.size() != params.size() || params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: slot/param/grad list lengths differ");
    }
    for (std::size_t i = 0; i < slots.size(); ++i) state.update(slots[i], *params[i], *grads[i]);
}

}  // namespace dub
