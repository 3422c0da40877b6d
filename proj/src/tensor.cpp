#include "augda/tensor.hpp"

#include <cstring>
#include <malloc.h>

namespace augda::nn {

namespace {
// Activations are a few MB each and are freed every step. glibc would
// serve them with fresh mmaps (page faults plus zeroing on each call);
// keeping them on the heap roughly halves forward time.
[[maybe_unused]] const bool kMallocTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
}  // namespace

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("Tensor +=: shape mismatch " + shape_string(shape_) + " vs " +
                                                    shape_string(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor Tensor::reshaped(std::array<int, 4> shape) const {
    Tensor t(shape);
    if (t.size() != size()) throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    t.data_ = data_;
    return t;
}

std::string shape_string(const std::array<int, 4>& s) {
    return "[" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
           std::to_string(s[3]) + "]";
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(a.shape()) + " and " +
                                    shape_string(b.shape()));
    Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
    for (int n = 0; n < a.n(); ++n) {
        std::memcpy(out.sample(n), a.sample(n), a.sample_size() * sizeof(double));
        std::memcpy(out.sample(n) + a.sample_size(), b.sample(n), b.sample_size() * sizeof(double));
    }
    return out;
}

void split_channels(const Tensor& g, int c_first, Tensor& first, Tensor& second) {
    first = Tensor(g.n(), c_first, g.h(), g.w());
    second = Tensor(g.n(), g.c() - c_first, g.h(), g.w());
    for (int n = 0; n < g.n(); ++n) {
        std::memcpy(first.sample(n), g.sample(n), first.sample_size() * sizeof(double));
        std::memcpy(second.sample(n), g.sample(n) + first.sample_size(), second.sample_size() * sizeof(double));
    }
}

}  // namespace augda::nn
