#pragma once

#include <memory>
#include <string>
#include <vector>

#include "augda/rng.hpp"
#include "augda/tensor.hpp"

namespace augda::nn {

enum class Mode { train, eval };

/// A named tensor owned by a layer. Buffers (batch-norm running
/// statistics) are not trainable and never receive gradients.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true);
    void zero_grad() { grad.fill(0.0); }
};

/// Per-call state needed by backward. Each layer uses whichever fields it
/// needs; one cache per forward call lets a network run several forwards
/// before backpropagating through each.
struct LayerCache {
    Tensor a;
    Tensor b;
    std::vector<int> index;
    std::array<int, 4> in_shape{0, 0, 0, 0};
    Mode mode = Mode::eval;
};

class Layer {
public:
    virtual ~Layer() = default;
    /// `rng` is only consulted by stochastic layers in train mode.
    virtual Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) = 0;
    /// Accumulates parameter gradients and returns the input gradient.
    virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache) = 0;
    virtual void collect(std::vector<Parameter*>&) {}
    virtual std::string kind() const = 0;
};

class Conv2d final : public Layer {
public:
    Conv2d(std::string prefix, int in_channels, int out_channels, int kernel, int stride, int pad, SeededRng& init,
           double init_gain = 2.0);
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string kind() const override { return "conv2d"; }
    int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

private:
    int cin_, cout_, kernel_, stride_, pad_;
    Parameter weight_;  // [cout, cin, k, k]
    Parameter bias_;    // [cout]
};

/// 2x2 stride-2 transposed convolution (exact upsampling by two).
class ConvTranspose2x2 final : public Layer {
public:
    ConvTranspose2x2(std::string prefix, int in_channels, int out_channels, SeededRng& init);
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string kind() const override { return "conv_transpose2x2"; }

private:
    int cin_, cout_;
    Parameter weight_;  // [cin, cout, 2, 2]
    Parameter bias_;    // [cout]
};

class BatchNorm2d final : public Layer {
public:
    BatchNorm2d(std::string prefix, int channels, double momentum = 0.1, double eps = 1e-5);
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string kind() const override { return "batchnorm2d"; }

private:
    int channels_;
    double momentum_, eps_;
    Parameter gamma_, beta_;
    Parameter running_mean_, running_var_;
};

class ReLU final : public Layer {
public:
    explicit ReLU(double negative_slope = 0.0) : slope_(negative_slope) {}
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    std::string kind() const override { return slope_ == 0.0 ? "relu" : "leaky_relu"; }

private:
    double slope_;
};

class MaxPool2x2 final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    std::string kind() const override { return "maxpool2x2"; }
};

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) in train mode;
/// identity in eval mode or when no rng is supplied.
class Dropout final : public Layer {
public:
    explicit Dropout(double rate) : rate_(rate) {}
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    std::string kind() const override { return "dropout"; }
    double rate() const { return rate_; }

private:
    double rate_;
};

class Flatten final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    std::string kind() const override { return "flatten"; }
};

class Linear final : public Layer {
public:
    Linear(std::string prefix, int in_features, int out_features, SeededRng& init, bool zero_init = false);
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string kind() const override { return "linear"; }

private:
    int in_, out_;
    Parameter weight_;  // [out, in]
    Parameter bias_;    // [out]
};

class Sigmoid final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    std::string kind() const override { return "sigmoid"; }
};

/// Average pooling by an integer factor (factor 1 is the identity).
class AvgPool final : public Layer {
public:
    explicit AvgPool(int factor) : factor_(factor) {}
    Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) override;
    Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
    std::string kind() const override { return "avgpool"; }

private:
    int factor_;
};

/// Ordered chain of layers with one cache per layer per call.
class Sequential {
public:
    using Caches = std::vector<LayerCache>;

    Sequential() = default;
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;

    template <class L, class... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor forward(const Tensor& x, Mode mode, Caches& caches, SeededRng* rng);
    Tensor backward(const Tensor& grad_out, const Caches& caches);
    void collect(std::vector<Parameter*>& out);
    std::size_t size() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace augda::nn
