#include "augda/optim.hpp"

namespace augda::nn {

Adam::Adam(Network& net, double lr, double beta1, double beta2, double eps)
    : net_(net), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), state_(net.parameters().size()) {
    for (std::size_t i = 0; i < state_.size(); ++i) {
        const auto n = net.parameters()[i]->value.size();
        state_[i].m.assign(n, 0.0);
        state_[i].v.assign(n, 0.0);
    }
}

void Adam::step() {
    const auto& params = net_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (!p.trainable || p.frozen) continue;
        State& s = state_[i];
        ++s.t;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
        const double step = lr_ / bc1;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            s.m[k] = beta1_ * s.m[k] + (1.0 - beta1_) * g;
            s.v[k] = beta2_ * s.v[k] + (1.0 - beta2_) * g * g;
            p.value[k] -= step * s.m[k] / (std::sqrt(s.v[k] / bc2) + eps_);
        }
    }
}

double multistep_lr(double lr0, double gamma, const std::vector<int>& milestones, int epoch) {
    double lr = lr0;
    for (int m : milestones)
        if (epoch >= m) lr *= gamma;
    return lr;
}

}  // namespace augda::nn
