#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bigen/graph.hpp"

namespace bigen {

struct AdamConfig {
    double lr = 1e-4;
    double weight_decay = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with decoupled weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <class T>
class Adam {
   public:
    Adam(std::vector<ParamPtr<T>> params, AdamConfig config);

    // Applies one update from each parameter's accumulated grad, scaled by
    // grad_scale (e.g. 1/accumulated cases).
    void step(T grad_scale = T(1));
    void zero_grad();

    std::uint64_t step_count() const noexcept { return step_; }
    const AdamConfig& config() const noexcept { return config_; }
    std::span<const ParamPtr<T>> params() const noexcept { return params_; }

   private:
    AdamConfig config_;
    std::vector<ParamPtr<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t step_ = 0;
};

// One update of a single tensor; exposed for tests.
template <class T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, std::vector<double>& m, std::vector<double>& v,
                 std::uint64_t step, const AdamConfig& config, T grad_scale = T(1));

}  // namespace bigen
