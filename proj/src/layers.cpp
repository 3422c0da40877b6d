#include "augda/layers.hpp"

#include <cmath>

#include <Eigen/Core>

namespace augda::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

Tensor he_normal(std::array<int, 4> shape, int fan_in, double gain, SeededRng& rng) {
    Tensor t(shape);
    const double std = std::sqrt(gain / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = rng.normal() * std;
    return t;
}

}  // namespace

Parameter::Parameter(std::string n, Tensor v, bool t)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(t) {}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string prefix, int in_channels, int out_channels, int kernel, int stride, int pad, SeededRng& init,
               double init_gain)
    : cin_(in_channels), cout_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      weight_(prefix + ".weight",
              he_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, init_gain, init)),
      bias_(prefix + ".bias", Tensor(1, out_channels, 1, 1)) {}

void Conv2d::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

Tensor Conv2d::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    if (x.c() != cin_)
        throw std::invalid_argument("Conv2d " + weight_.name + ": expected " + std::to_string(cin_) +
                                    " channels, got " + shape_string(x.shape()));
    const int H = x.h(), W = x.w();
    const int Ho = out_size(H), Wo = out_size(W);
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("Conv2d: input too small " + shape_string(x.shape()));
    const int K = cin_ * kernel_ * kernel_, P = Ho * Wo;
    cache.in_shape = x.shape();
    cache.mode = mode;
    cache.a = Tensor(x.n(), 1, K, P);
    Tensor y(x.n(), cout_, Ho, Wo);
    CMapMat wmat(weight_.value.data(), cout_, K);
    for (int n = 0; n < x.n(); ++n) {
        double* cols = cache.a.sample(n);
        const double* xs = x.sample(n);
        for (int ci = 0; ci < cin_; ++ci)
            for (int ky = 0; ky < kernel_; ++ky)
                for (int kx = 0; kx < kernel_; ++kx) {
                    double* row = cols + static_cast<std::size_t>((ci * kernel_ + ky) * kernel_ + kx) * P;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        double* dst = row + static_cast<std::size_t>(oy) * Wo;
                        if (iy < 0 || iy >= H) {
                            std::fill(dst, dst + Wo, 0.0);
                            continue;
                        }
                        const double* src = xs + (static_cast<std::size_t>(ci) * H + iy) * W;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            dst[ox] = (ix < 0 || ix >= W) ? 0.0 : src[ix];
                        }
                    }
                }
        MapMat ymat(y.sample(n), cout_, P);
        ymat.noalias() = wmat * CMapMat(cols, K, P);
        for (int co = 0; co < cout_; ++co) ymat.row(co).array() += bias_.value[static_cast<std::size_t>(co)];
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& gy, const LayerCache& cache) {
    const auto& s = cache.in_shape;
    const int H = s[2], W = s[3];
    const int Ho = gy.h(), Wo = gy.w();
    const int K = cin_ * kernel_ * kernel_, P = Ho * Wo;
    Tensor gx(s);
    CMapMat wmat(weight_.value.data(), cout_, K);
    MapMat gw(weight_.grad.data(), cout_, K);
    RowMat gcols(K, P);
    for (int n = 0; n < gy.n(); ++n) {
        CMapMat g(gy.sample(n), cout_, P);
        CMapMat cols(cache.a.sample(n), K, P);
        gw.noalias() += g * cols.transpose();
        for (int co = 0; co < cout_; ++co) {
            const double* row = gy.sample(n) + static_cast<std::size_t>(co) * P;
            double acc = 0.0;
            for (int p = 0; p < P; ++p) acc += row[p];
            bias_.grad[static_cast<std::size_t>(co)] += acc;
        }
        gcols.noalias() = wmat.transpose() * g;
        double* gxs = gx.sample(n);
        for (int ci = 0; ci < cin_; ++ci)
            for (int ky = 0; ky < kernel_; ++ky)
                for (int kx = 0; kx < kernel_; ++kx) {
                    const double* row = gcols.data() + static_cast<std::size_t>((ci * kernel_ + ky) * kernel_ + kx) * P;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= H) continue;
                        double* dst = gxs + (static_cast<std::size_t>(ci) * H + iy) * W;
                        const double* src = row + static_cast<std::size_t>(oy) * Wo;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix >= 0 && ix < W) dst[ix] += src[ox];
                        }
                    }
                }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2x2

ConvTranspose2x2::ConvTranspose2x2(std::string prefix, int in_channels, int out_channels, SeededRng& init)
    : cin_(in_channels), cout_(out_channels),
      weight_(prefix + ".weight", he_normal({in_channels, out_channels, 2, 2}, in_channels, 2.0, init)),
      bias_(prefix + ".bias", Tensor(1, out_channels, 1, 1)) {}

void ConvTranspose2x2::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

Tensor ConvTranspose2x2::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    if (x.c() != cin_) throw std::invalid_argument("ConvTranspose2x2: channel mismatch " + shape_string(x.shape()));
    const int H = x.h(), W = x.w(), P = H * W;
    cache.in_shape = x.shape();
    cache.mode = mode;
    cache.a = x;
    Tensor y(x.n(), cout_, 2 * H, 2 * W);
    CMapMat wmat(weight_.value.data(), cin_, cout_ * 4);
    RowMat tmp(cout_ * 4, P);
    for (int n = 0; n < x.n(); ++n) {
        tmp.noalias() = wmat.transpose() * CMapMat(x.sample(n), cin_, P);
        double* ys = y.sample(n);
        for (int co = 0; co < cout_; ++co) {
            const double b = bias_.value[static_cast<std::size_t>(co)];
            for (int k = 0; k < 4; ++k) {
                const int a = k / 2, bb = k % 2;
                const double* src = tmp.data() + static_cast<std::size_t>(co * 4 + k) * P;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        ys[(static_cast<std::size_t>(co) * 2 * H + 2 * i + a) * 2 * W + 2 * j + bb] = src[i * W + j] + b;
            }
        }
    }
    return y;
}

Tensor ConvTranspose2x2::backward(const Tensor& gy, const LayerCache& cache) {
    const auto& s = cache.in_shape;
    const int H = s[2], W = s[3], P = H * W;
    Tensor gx(s);
    CMapMat wmat(weight_.value.data(), cin_, cout_ * 4);
    MapMat gw(weight_.grad.data(), cin_, cout_ * 4);
    RowMat tmp(cout_ * 4, P);
    for (int n = 0; n < gy.n(); ++n) {
        const double* gs = gy.sample(n);
        for (int co = 0; co < cout_; ++co) {
            double bsum = 0.0;
            for (int k = 0; k < 4; ++k) {
                const int a = k / 2, bb = k % 2;
                double* dst = tmp.data() + static_cast<std::size_t>(co * 4 + k) * P;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j) {
                        const double v = gs[(static_cast<std::size_t>(co) * 2 * H + 2 * i + a) * 2 * W + 2 * j + bb];
                        dst[i * W + j] = v;
                        bsum += v;
                    }
            }
            bias_.grad[static_cast<std::size_t>(co)] += bsum;
        }
        CMapMat xs(cache.a.sample(n), cin_, P);
        gw.noalias() += xs * tmp.transpose();
        MapMat(gx.sample(n), cin_, P).noalias() = wmat * tmp;
    }
    return gx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string prefix, int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps), gamma_(prefix + ".gamma", Tensor(1, channels, 1, 1, 1.0)),
      beta_(prefix + ".beta", Tensor(1, channels, 1, 1)),
      running_mean_(prefix + ".running_mean", Tensor(1, channels, 1, 1), false),
      running_var_(prefix + ".running_var", Tensor(1, channels, 1, 1, 1.0), false) {}

void BatchNorm2d::collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    if (x.c() != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch " + shape_string(x.shape()));
    const std::size_t plane = x.plane();
    const std::size_t count = plane * static_cast<std::size_t>(x.n());
    cache.in_shape = x.shape();
    cache.mode = mode;
    cache.a = Tensor(x.shape());
    cache.b = Tensor(1, channels_, 1, 1);
    Tensor y(x.shape());
    for (int c = 0; c < channels_; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (int n = 0; n < x.n(); ++n) {
                const double* p = x.sample(n) + ci * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (int n = 0; n < x.n(); ++n) {
                const double* p = x.sample(n) + ci * plane;
                for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            var = sq / static_cast<double>(count);
            if (!running_mean_.frozen) {
                const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
                running_mean_.value[ci] = (1 - momentum_) * running_mean_.value[ci] + momentum_ * mean;
                running_var_.value[ci] = (1 - momentum_) * running_var_.value[ci] + momentum_ * unbiased;
            }
        } else {
            mean = running_mean_.value[ci];
            var = running_var_.value[ci];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        cache.b[ci] = inv;
        const double g = gamma_.value[ci], b = beta_.value[ci];
        for (int n = 0; n < x.n(); ++n) {
            const double* p = x.sample(n) + ci * plane;
            double* xh = cache.a.sample(n) + ci * plane;
            double* q = y.sample(n) + ci * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean) * inv;
                q[i] = g * xh[i] + b;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy, const LayerCache& cache) {
    Tensor gx(cache.in_shape);
    const std::size_t plane = gy.plane();
    const double count = static_cast<double>(plane * static_cast<std::size_t>(gy.n()));
    for (int c = 0; c < channels_; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const double g = gamma_.value[ci], inv = cache.b[ci];
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int n = 0; n < gy.n(); ++n) {
            const double* d = gy.sample(n) + ci * plane;
            const double* xh = cache.a.sample(n) + ci * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += d[i];
                sum_dy_xh += d[i] * xh[i];
            }
        }
        gamma_.grad[ci] += sum_dy_xh;
        beta_.grad[ci] += sum_dy;
        for (int n = 0; n < gy.n(); ++n) {
            const double* d = gy.sample(n) + ci * plane;
            const double* xh = cache.a.sample(n) + ci * plane;
            double* out = gx.sample(n) + ci * plane;
            if (cache.mode == Mode::train) {
                const double k = g * inv / count;
                for (std::size_t i = 0; i < plane; ++i)
                    out[i] = k * (count * d[i] - sum_dy - xh[i] * sum_dy_xh);
            } else {
                for (std::size_t i = 0; i < plane; ++i) out[i] = d[i] * g * inv;
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling layers

Tensor ReLU::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    cache.mode = mode;
    cache.a = x;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
    return y;
}

Tensor ReLU::backward(const Tensor& gy, const LayerCache& cache) {
    Tensor gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = cache.a[i] > 0.0 ? gy[i] : slope_ * gy[i];
    return gx;
}

Tensor MaxPool2x2::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    if (x.h() % 2 || x.w() % 2) throw std::invalid_argument("MaxPool2x2: odd spatial size " + shape_string(x.shape()));
    const int Ho = x.h() / 2, Wo = x.w() / 2;
    Tensor y(x.n(), x.c(), Ho, Wo);
    cache.mode = mode;
    cache.in_shape = x.shape();
    cache.index.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j, ++o) {
                    int best = 0;
                    double bv = x.at(n, c, 2 * i, 2 * j);
                    for (int k = 1; k < 4; ++k) {
                        const double v = x.at(n, c, 2 * i + k / 2, 2 * j + k % 2);
                        if (v > bv) {
                            bv = v;
                            best = k;
                        }
                    }
                    y[o] = bv;
                    cache.index[o] = best;
                }
    return y;
}

Tensor MaxPool2x2::backward(const Tensor& gy, const LayerCache& cache) {
    Tensor gx(cache.in_shape);
    std::size_t o = 0;
    for (int n = 0; n < gy.n(); ++n)
        for (int c = 0; c < gy.c(); ++c)
            for (int i = 0; i < gy.h(); ++i)
                for (int j = 0; j < gy.w(); ++j, ++o) {
                    const int k = cache.index[o];
                    gx.at(n, c, 2 * i + k / 2, 2 * j + k % 2) += gy[o];
                }
    return gx;
}

Tensor Dropout::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng* rng) {
    cache.mode = mode;
    if (mode != Mode::train || rng == nullptr || rate_ <= 0.0) {
        cache.a = Tensor();
        return x;
    }
    cache.a = Tensor(x.shape());
    const double keep = 1.0 - rate_;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng->uniform() < keep ? 1.0 / keep : 0.0;
        cache.a[i] = m;
        y[i] = x[i] * m;
    }
    return y;
}

Tensor Dropout::backward(const Tensor& gy, const LayerCache& cache) {
    if (cache.a.size() == 0) return gy;
    Tensor gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * cache.a[i];
    return gx;
}

Tensor Flatten::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    cache.mode = mode;
    cache.in_shape = x.shape();
    return x.reshaped({x.n(), static_cast<int>(x.sample_size()), 1, 1});
}

Tensor Flatten::backward(const Tensor& gy, const LayerCache& cache) { return gy.reshaped(cache.in_shape); }

Linear::Linear(std::string prefix, int in_features, int out_features, SeededRng& init, bool zero_init)
    : in_(in_features), out_(out_features),
      weight_(prefix + ".weight", zero_init ? Tensor(1, 1, out_features, in_features)
                                            : he_normal({1, 1, out_features, in_features}, in_features, 2.0, init)),
      bias_(prefix + ".bias", Tensor(1, out_features, 1, 1)) {}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

Tensor Linear::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    if (static_cast<int>(x.sample_size()) != in_)
        throw std::invalid_argument("Linear " + weight_.name + ": expected " + std::to_string(in_) +
                                    " features, got " + shape_string(x.shape()));
    cache.mode = mode;
    cache.in_shape = x.shape();
    cache.a = x;
    Tensor y(x.n(), out_, 1, 1);
    CMapMat w(weight_.value.data(), out_, in_);
    CMapMat xm(x.data(), x.n(), in_);
    MapMat ym(y.data(), x.n(), out_);
    ym.noalias() = xm * w.transpose();
    for (int n = 0; n < x.n(); ++n)
        for (int o = 0; o < out_; ++o) ym(n, o) += bias_.value[static_cast<std::size_t>(o)];
    return y;
}

Tensor Linear::backward(const Tensor& gy, const LayerCache& cache) {
    Tensor gx(cache.in_shape);
    CMapMat w(weight_.value.data(), out_, in_);
    CMapMat g(gy.data(), gy.n(), out_);
    CMapMat xm(cache.a.data(), gy.n(), in_);
    MapMat(weight_.grad.data(), out_, in_).noalias() += g.transpose() * xm;
    for (int n = 0; n < gy.n(); ++n)
        for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += g(n, o);
    MapMat(gx.data(), gy.n(), in_).noalias() = g * w;
    return gx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    cache.mode = mode;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (v >= 0) {
            y[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            y[i] = e / (1.0 + e);
        }
    }
    cache.a = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& gy, const LayerCache& cache) {
    Tensor gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * cache.a[i] * (1.0 - cache.a[i]);
    return gx;
}

Tensor AvgPool::forward(const Tensor& x, Mode mode, LayerCache& cache, SeededRng*) {
    cache.mode = mode;
    cache.in_shape = x.shape();
    if (factor_ == 1) return x;
    if (x.h() % factor_ || x.w() % factor_)
        throw std::invalid_argument("AvgPool: size not divisible by factor " + shape_string(x.shape()));
    const int Ho = x.h() / factor_, Wo = x.w() / factor_;
    const double scale = 1.0 / (factor_ * factor_);
    Tensor y(x.n(), x.c(), Ho, Wo);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) y.at(n, c, i / factor_, j / factor_) += x.at(n, c, i, j) * scale;
    return y;
}

Tensor AvgPool::backward(const Tensor& gy, const LayerCache& cache) {
    if (factor_ == 1) return gy;
    Tensor gx(cache.in_shape);
    const double scale = 1.0 / (factor_ * factor_);
    for (int n = 0; n < gx.n(); ++n)
        for (int c = 0; c < gx.c(); ++c)
            for (int i = 0; i < gx.h(); ++i)
                for (int j = 0; j < gx.w(); ++j) gx.at(n, c, i, j) = gy.at(n, c, i / factor_, j / factor_) * scale;
    return gx;
}

// ---------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode, Caches& caches, SeededRng* rng) {
    caches.assign(layers_.size(), LayerCache{});
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) cur = layers_[i]->forward(cur, mode, caches[i], rng);
    return cur;
}

Tensor Sequential::backward(const Tensor& grad_out, const Caches& caches) {
    if (caches.size() != layers_.size()) throw std::logic_error("Sequential::backward: cache count mismatch");
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, caches[i]);
    return g;
}

void Sequential::collect(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l->collect(out);
}

}  // namespace augda::nn
