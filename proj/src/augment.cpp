#include "augda/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace augda {

Mat3 Mat3::translation(double tx, double ty) { return Mat3{{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }

Mat3 Mat3::rotation_deg(double degrees) {
    const double t = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
            r.m[static_cast<std::size_t>(i * 3 + j)] = acc;
        }
    return r;
}

double Mat3::determinant() const {
    const auto& a = m;
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Mat3 Mat3::inverse() const {
    const double det = determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-12) throw std::invalid_argument("Mat3::inverse: singular matrix");
    const auto& a = m;
    Mat3 r;
    r.m = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det, (a[1] * a[5] - a[2] * a[4]) / det,
           (a[5] * a[6] - a[3] * a[8]) / det, (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
           (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det, (a[0] * a[4] - a[1] * a[3]) / det};
    return r;
}

std::array<double, 2> Mat3::apply(double x, double y) const {
    const double w = m[6] * x + m[7] * y + m[8];
    return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

Mat3 AffineParams::matrix(std::size_t rows, std::size_t cols) const {
    const double cx = (static_cast<double>(cols) - 1.0) / 2.0;
    const double cy = (static_cast<double>(rows) - 1.0) / 2.0;
    const Mat3 shear_m{{1, shear[0], 0, shear[1], 1, 0, 0, 0, 1}};
    const Mat3 scale_m{{scale[0], 0, 0, 0, scale[1], 0, 0, 0, 1}};
    return Mat3::translation(cx + translation[0], cy + translation[1]) * Mat3::rotation_deg(rotation_deg) * shear_m *
           scale_m * Mat3::translation(-cx, -cy);
}

AugmentationSpec AugmentationSpec::geometric_only() {
    AugmentationSpec s;
    s.geometric = true;
    return s;
}

AugmentationSpec AugmentationSpec::mri_only() {
    AugmentationSpec s;
    s.bias = true;
    s.motion = true;
    return s;
}

AugmentationSpec AugmentationSpec::all() {
    AugmentationSpec s;
    s.geometric = s.bias = s.motion = true;
    return s;
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

// Snaps coordinates that are integral up to rounding noise, so integer
// shifts and quarter turns are exact.
inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

SamplingMap::SamplingMap(std::size_t rows, std::size_t cols, const Mat3& forward, Interpolation interp)
    : rows_(rows), cols_(cols), taps_(rows * cols) {
    const Mat3 inv = forward.inverse();
    const auto W = static_cast<double>(cols), H = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            auto [qx, qy] = inv.apply(static_cast<double>(c), static_cast<double>(r));
            qx = snap(qx);
            qy = snap(qy);
            Tap& t = taps_[r * cols + c];
            if (interp == Interpolation::nearest) {
                const double nx = std::round(qx), ny = std::round(qy);
                if (nx < 0 || ny < 0 || nx > W - 1 || ny > H - 1) continue;
                t.src[0] = static_cast<std::int32_t>(ny * W + nx);
                t.w[0] = 1.0;
                continue;
            }
            if (qx < 0 || qy < 0 || qx > W - 1 || qy > H - 1) continue;
            const double x0 = std::floor(qx), y0 = std::floor(qy);
            const double fx = qx - x0, fy = qy - y0;
            const double x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const std::array<std::pair<double, double>, 4> pts{{{y0, x0}, {y0, x1}, {y1, x0}, {y1, x1}}};
            const std::array<double, 4> ws{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            for (std::size_t k = 0; k < 4; ++k) {
                t.src[k] = static_cast<std::int32_t>(pts[k].first * W + pts[k].second);
                t.w[k] = ws[k];
            }
        }
    }
}

void SamplingMap::apply(std::span<const double> in, std::span<double> out, double fill) const {
    if (in.size() != taps_.size() || out.size() != taps_.size())
        throw std::invalid_argument("SamplingMap::apply: size mismatch");
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        const Tap& t = taps_[i];
        if (t.src[0] < 0) {
            out[i] = fill;
            continue;
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k)
            if (t.src[k] >= 0 && t.w[k] != 0.0) acc += t.w[k] * in[static_cast<std::size_t>(t.src[k])];
        out[i] = acc;
    }
}

void SamplingMap::apply_transpose(std::span<const double> grad_out, std::span<double> grad_in) const {
    if (grad_in.size() != taps_.size() || grad_out.size() != taps_.size())
        throw std::invalid_argument("SamplingMap::apply_transpose: size mismatch");
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        const Tap& t = taps_[i];
        for (std::size_t k = 0; k < 4; ++k)
            if (t.src[k] >= 0 && t.w[k] != 0.0) grad_in[static_cast<std::size_t>(t.src[k])] += t.w[k] * grad_out[i];
    }
}

Grid<double> warp(const Grid<double>& in, const Mat3& forward, Interpolation interp, double fill) {
    SamplingMap map(in.rows(), in.cols(), forward, interp);
    Grid<double> out(in.rows(), in.cols());
    map.apply(in.values(), out.values(), fill);
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

void check(const Interval& iv, const char* what) {
    if (!(iv.lo <= iv.hi)) throw std::invalid_argument(std::string("inverted interval for ") + what);
}

}  // namespace

AffineParams sample_affine(SeededRng& rng, const AffineRanges& ranges) {
    check(ranges.rotation_deg, "rotation");
    check(ranges.shear, "shear");
    check(ranges.scale, "scale");
    check(ranges.translation, "translation");
    AffineParams p;
    p.rotation_deg = rng.uniform(ranges.rotation_deg.lo, ranges.rotation_deg.hi);
    p.shear = {rng.uniform(ranges.shear.lo, ranges.shear.hi), rng.uniform(ranges.shear.lo, ranges.shear.hi)};
    p.scale = {rng.uniform(ranges.scale.lo, ranges.scale.hi), rng.uniform(ranges.scale.lo, ranges.scale.hi)};
    p.translation = {rng.uniform(ranges.translation.lo, ranges.translation.hi),
                     rng.uniform(ranges.translation.lo, ranges.translation.hi)};
    return p;
}

std::size_t BiasFieldParams::coefficient_count(int order) {
    if (order < 0) throw std::invalid_argument("bias field order must be nonnegative");
    const auto n = static_cast<std::size_t>(order);
    return (n + 1) * (n + 2) / 2;
}

double BiasFieldParams::log_field(double u, double v) const {
    if (coefficients.size() != coefficient_count(order))
        throw std::invalid_argument("BiasFieldParams: coefficient count does not match order");
    double acc = 0.0;
    std::size_t k = 0;
    for (int d = 0; d <= order; ++d)
        for (int i = d; i >= 0; --i) acc += coefficients[k++] * std::pow(u, i) * std::pow(v, d - i);
    return acc;
}

BiasFieldParams sample_bias_field(SeededRng& rng, const BiasRanges& ranges) {
    check(ranges.coefficient, "bias coefficient");
    BiasFieldParams b;
    b.order = ranges.order;
    b.coefficients.resize(BiasFieldParams::coefficient_count(ranges.order));
    for (auto& c : b.coefficients) c = rng.uniform(ranges.coefficient.lo, ranges.coefficient.hi);
    return b;
}

MotionParams sample_motion(SeededRng& rng, const MotionRanges& ranges) {
    check(ranges.onset, "motion onset");
    check(ranges.rotation_deg, "motion rotation");
    check(ranges.translation, "motion translation");
    if (ranges.min_events < 0 || ranges.max_events < ranges.min_events)
        throw std::invalid_argument("motion event count range invalid");
    if (!(ranges.onset.lo > 0.0 && ranges.onset.hi < 1.0))
        throw std::invalid_argument("motion onset range must lie inside (0,1)");
    const auto span = static_cast<std::uint64_t>(ranges.max_events - ranges.min_events + 1);
    const int n = ranges.min_events + static_cast<int>(rng.below(span));
    MotionParams m;
    std::vector<double> onsets;
    for (int i = 0; i < n; ++i) onsets.push_back(rng.uniform(ranges.onset.lo, ranges.onset.hi));
    std::sort(onsets.begin(), onsets.end());
    onsets.erase(std::unique(onsets.begin(), onsets.end()), onsets.end());
    for (double onset : onsets) {
        MotionEvent e;
        e.onset = onset;
        e.rotation_deg = rng.uniform(ranges.rotation_deg.lo, ranges.rotation_deg.hi);
        e.translation = {rng.uniform(ranges.translation.lo, ranges.translation.hi),
                         rng.uniform(ranges.translation.lo, ranges.translation.hi)};
        m.events.push_back(e);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Operators

Image2D apply_affine(const Image2D& image, const Mat3& forward, Interpolation interp) {
    return image.with_pixels(warp(image.pixels(), forward, interp));
}

Image2D apply_affine(const Image2D& image, const AffineParams& p) {
    return apply_affine(image, p.matrix(image.rows(), image.cols()), p.interpolation);
}

BinMask apply_affine_to_mask(const BinMask& mask, const AffineParams& p) {
    const SamplingMap map(mask.rows(), mask.cols(), p.matrix(mask.rows(), mask.cols()), Interpolation::nearest);
    const auto in = mask.as_prob();
    Grid<double> out(mask.rows(), mask.cols());
    map.apply(in.probs().values(), out.values());
    Grid<std::uint8_t> labels(mask.rows(), mask.cols());
    for (std::size_t i = 0; i < out.size(); ++i) labels[i] = out[i] > 0.5 ? 1 : 0;
    return BinMask(std::move(labels));
}

ProbMask apply_affine_to_mask(const ProbMask& mask, const AffineParams& p) {
    return ProbMask(warp(mask.probs(), p.matrix(mask.rows(), mask.cols()), Interpolation::nearest));
}

Grid<double> bias_field(std::size_t rows, std::size_t cols, const BiasFieldParams& b) {
    for (double c : b.coefficients)
        if (!std::isfinite(c)) throw std::invalid_argument("apply_bias_field: non-finite coefficient");
    Grid<double> field(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double v = rows > 1 ? 2.0 * static_cast<double>(r) / static_cast<double>(rows - 1) - 1.0 : 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double u = cols > 1 ? 2.0 * static_cast<double>(c) / static_cast<double>(cols - 1) - 1.0 : 0.0;
            field(r, c) = std::exp(b.log_field(u, v));
        }
    }
    return field;
}

Image2D apply_bias_field(const Image2D& image, const BiasFieldParams& b) {
    const auto field = bias_field(image.rows(), image.cols(), b);
    Grid<double> out = image.pixels();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= field[i];
    return image.with_pixels(std::move(out));
}

namespace {

using cvec = std::vector<std::complex<double>>;

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

// Unnormalised 2-D DFT in either direction.
cvec dft2(const cvec& in, std::size_t rows, std::size_t cols, int sign) {
    cvec out(in.size());
    cvec scratch = in;
    fftw_plan plan;
    {
        std::lock_guard lock(planner_mutex());
        plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols),
                                reinterpret_cast<fftw_complex*>(scratch.data()),
                                reinterpret_cast<fftw_complex*>(out.data()), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    fftw_execute(plan);
    {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
    return out;
}

cvec spectrum(const Grid<double>& g) {
    cvec in(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) in[i] = g[i];
    return dft2(in, g.rows(), g.cols(), FFTW_FORWARD);
}

}  // namespace

void validate(const MotionParams& m) {
    double prev = 0.0;
    for (const auto& e : m.events) {
        if (!(e.onset > 0.0 && e.onset < 1.0)) throw std::invalid_argument("motion onset outside (0,1)");
        if (!(e.onset > prev)) throw std::invalid_argument("motion onsets must be strictly increasing");
        prev = e.onset;
    }
}

Image2D apply_kspace_motion(const Image2D& image, const MotionParams& m) {
    validate(m);
    if (m.events.empty()) return image;
    const std::size_t rows = image.rows(), cols = image.cols();
    cvec k = spectrum(image.pixels());
    const double cx = (static_cast<double>(cols) - 1.0) / 2.0;
    const double cy = (static_cast<double>(rows) - 1.0) / 2.0;
    const std::size_t half = rows / 2;
    for (std::size_t e = 0; e < m.events.size(); ++e) {
        const auto& ev = m.events[e];
        const Mat3 pose = Mat3::translation(cx + ev.translation[0], cy + ev.translation[1]) *
                          Mat3::rotation_deg(ev.rotation_deg) * Mat3::translation(-cx, -cy);
        const cvec moved = spectrum(warp(image.pixels(), pose, Interpolation::linear));
        const auto first = static_cast<std::size_t>(std::floor(ev.onset * static_cast<double>(rows)));
        const auto last = e + 1 < m.events.size()
                              ? static_cast<std::size_t>(std::floor(m.events[e + 1].onset * static_cast<double>(rows)))
                              : rows;
        for (std::size_t line = first; line < last; ++line) {
            const std::size_t row = (line + rows - half) % rows;
            std::copy_n(moved.begin() + static_cast<std::ptrdiff_t>(row * cols), cols,
                        k.begin() + static_cast<std::ptrdiff_t>(row * cols));
        }
    }
    const cvec back = dft2(k, rows, cols, FFTW_BACKWARD);
    const double norm = 1.0 / static_cast<double>(rows * cols);
    Grid<double> out(rows, cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = back[i].real() * norm;
    return image.with_pixels(std::move(out));
}

std::pair<Image2D, AppliedRecord> compose_and_apply(const Image2D& image, const AugmentationSpec& spec,
                                                    SeededRng& rng) {
    AppliedRecord rec;
    Image2D out = image;
    if (spec.geometric) {
        rec.affine = sample_affine(rng, spec.affine);
        out = apply_affine(out, *rec.affine);
    }
    if (spec.bias) {
        rec.bias = sample_bias_field(rng, spec.bias_ranges);
        out = apply_bias_field(out, *rec.bias);
    }
    if (spec.motion) {
        rec.motion = sample_motion(rng, spec.motion_ranges);
        out = apply_kspace_motion(out, *rec.motion);
    }
    return {std::move(out), std::move(rec)};
}

Image2D replay(const Image2D& image, const AppliedRecord& record) {
    Image2D out = image;
    if (record.affine) out = apply_affine(out, *record.affine);
    if (record.bias) out = apply_bias_field(out, *record.bias);
    if (record.motion) out = apply_kspace_motion(out, *record.motion);
    return out;
}

std::optional<SamplingMap> spatial_map(const AppliedRecord& record, std::size_t rows, std::size_t cols) {
    if (!record.affine) return std::nullopt;
    return SamplingMap(rows, cols, record.affine->matrix(rows, cols), Interpolation::nearest);
}

}  // namespace augda
