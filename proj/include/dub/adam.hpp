#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dub/tensor.hpp"

namespace dub {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators for a fixed list of parameter slots.
///
/// Each slot keeps its own step counter, so a parameter that only receives
/// gradients on some iterations (a bootstrap head that was not drawn) gets
/// the bias correction for the number of updates it has actually seen.
class AdamState {
public:
    AdamState(AdamConfig config, std::span<const Tensor> params);

    const AdamConfig& config() const noexcept { return config_; }
    std::size_t slots() const noexcept { return first_.size(); }
    std::int64_t step(std::size_t slot) const { return steps_.at(slot); }
    const Tensor& first_moment(std::size_t slot) const { return first_.at(slot); }
    const Tensor& second_moment(std::size_t slot) const { return second_.at(slot); }

    /// Updates `param` in place from `grad` and advances the slot's counter.
    void update(std::size_t slot, Tensor& param, const Tensor& grad);

private:
    AdamConfig config_;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
    std::vector<std::int64_t> steps_;
};

/// One Adam update over matching lists of slots, parameters and gradients.
void adam_step(std::span<const std::size_t> slots, std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state);

}  // namespace dub
