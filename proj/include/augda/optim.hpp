#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "augda/nets.hpp"

namespace augda::nn {

/// Adam over a network's trainable, unfrozen parameters. Frozen parameters
/// are skipped entirely: neither their values nor their moment estimates
/// change.
class Adam {
public:
    explicit Adam(Network& net, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step();

private:
    struct State {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };
    Network& net_;
    double lr_, beta1_, beta2_, eps_;
    std::vector<State> state_;
};

/// Step decay: lr0 * gamma^(number of milestones <= epoch).
double multistep_lr(double lr0, double gamma, const std::vector<int>& milestones, int epoch);

}  // namespace augda::nn
