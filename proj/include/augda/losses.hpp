#pragma once

#include <span>
#include <vector>

#include "augda/core.hpp"
#include "augda/tensor.hpp"

namespace augda {

/// Weights of the total objective sup + alpha * cons - beta * adv.
struct LossWeights {
    double alpha = 0.2;
    double beta = 0.3;
    double epsilon = 1e-5;  ///< Dice smoothing, in numerator and denominator

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

struct DomainTarget {
    std::vector<double> one_hot;

    static DomainTarget of(int domain, int n_domains);
    int index() const;
};

/// 1 - (2 sum p t + eps) / (sum p + sum t + eps). Both empty gives 0.
double soft_dice_loss(const ProbMask& pred, const ProbMask& target, double eps = 1e-5);
double soft_dice_loss(const ProbMask& pred, const BinMask& target, double eps = 1e-5);

/// Batched soft Dice on [N,1,H,W] tensors, averaged over samples. Gradients
/// (if requested) are written, not accumulated.
double soft_dice_loss(const nn::Tensor& pred, const nn::Tensor& target, double eps, nn::Tensor* grad_pred,
                      nn::Tensor* grad_target = nullptr);

/// Soft Dice between a (re-aligned) prediction on the original image and the
/// prediction on its augmented counterpart.
double consistency_loss(const ProbMask& pred_orig_aligned, const ProbMask& pred_aug, double eps = 1e-5);
double consistency_loss(const nn::Tensor& pred_orig_aligned, const nn::Tensor& pred_aug, double eps,
                        nn::Tensor* grad_orig, nn::Tensor* grad_aug);

/// Softmax cross entropy of one logit vector against a one-hot target.
double adversarial_loss(std::span<const double> logits, const DomainTarget& target);
/// Batched: logits [N, n_domains, 1, 1], one domain index per sample,
/// averaged over samples. `grad` receives d loss / d logits.
double adversarial_loss(const nn::Tensor& logits, std::span<const int> domains, nn::Tensor* grad = nullptr);

/// sup + alpha * cons - beta * adv. Throws on non-finite components.
double total_loss(double sup, double cons, double adv, const LossWeights& w);

/// Fraction of samples whose argmax logit equals the domain label.
double domain_accuracy(const nn::Tensor& logits, std::span<const int> domains);

}  // namespace augda
