#include "bigen/optim.hpp"

#include <cmath>
#include <unordered_set>

namespace bigen {

template <class T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, std::vector<double>& m, std::vector<double>& v,
                 std::uint64_t step, const AdamConfig& config, T grad_scale) {
    if (param.shape() != grad.shape()) {
        throw DataError("adam: gradient shape " + shape_str(grad.shape()) + " does not match parameter " +
                        shape_str(param.shape()));
    }
    if (m.size() != param.numel() || v.size() != param.numel()) {
        throw DataError("adam: moment accumulators do not match parameter " + shape_str(param.shape()));
    }
    if (step == 0) throw DataError("adam: step count starts at 1");
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = static_cast<double>(grad[i]) * grad_scale;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double p = param[i];
        param[i] = static_cast<T>(p - config.lr * (mhat / (std::sqrt(vhat) + config.epsilon) + config.weight_decay * p));
    }
}

template <class T>
Adam<T>::Adam(std::vector<ParamPtr<T>> params, AdamConfig config) : config_(config) {
    // Shared parameters may be listed more than once; each storage is updated once.
    std::unordered_set<const Parameter<T>*> seen;
    for (auto& p : params) {
        if (seen.insert(p.get()).second) params_.push_back(std::move(p));
    }
    for (const auto& p : params_) {
        m_.emplace_back(p->numel(), 0.0);
        v_.emplace_back(p->numel(), 0.0);
    }
}

template <class T>
void Adam<T>::step(T grad_scale) {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        adam_update(params_[i]->value, params_[i]->grad, m_[i], v_[i], step_, config_, grad_scale);
    }
}

template <class T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;
template void adam_update<float>(Tensor<float>&, const Tensor<float>&, std::vector<double>&, std::vector<double>&,
                                 std::uint64_t, const AdamConfig&, float);
template void adam_update<double>(Tensor<double>&, const Tensor<double>&, std::vector<double>&,
                                  std::vector<double>&, std::uint64_t, const AdamConfig&, double);

}  // namespace bigen
