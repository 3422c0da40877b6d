#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace augda::nn {

// Eigen peels reductions and matrix-vector products to the buffer's
// alignment, so the summation order depends on where the allocator put the
// data. Fixed 64-byte alignment makes results a function of shape alone.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

/// Dense NCHW tensor of doubles. Fully-connected activations use H = W = 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, double fill = 0.0)
        : shape_{n, c, h, w}, data_(static_cast<std::size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("Tensor: negative dimension");
    }
    explicit Tensor(std::array<int, 4> shape, double fill = 0.0) : Tensor(shape[0], shape[1], shape[2], shape[3], fill) {}

    const std::array<int, 4>& shape() const { return shape_; }
    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
    std::size_t sample_size() const { return static_cast<std::size_t>(shape_[1]) * plane(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    double* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * sample_size(); }
    const double* sample(int n) const { return data_.data() + static_cast<std::size_t>(n) * sample_size(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    Tensor& operator+=(const Tensor& o);
    /// Reinterpret with a new shape of equal element count.
    Tensor reshaped(std::array<int, 4> shape) const;

    bool operator==(const Tensor&) const = default;

private:
    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }
    std::array<int, 4> shape_{0, 0, 0, 0};
    std::vector<double, AlignedAllocator<double>> data_;
};

std::string shape_string(const std::array<int, 4>& s);

/// Channel concatenation of two tensors with equal N, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels for gradients.
void split_channels(const Tensor& g, int c_first, Tensor& first, Tensor& second);

}  // namespace augda::nn
