#pragma once

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "augda/core.hpp"

namespace augda {

enum class Interpolation { linear, nearest };

/// 3x3 homogeneous matrix acting on (x = column, y = row, 1).
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    static Mat3 translation(double tx, double ty);
    static Mat3 rotation_deg(double degrees);

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    Mat3 operator*(const Mat3& o) const;
    double determinant() const;
    /// Throws std::invalid_argument when singular.
    Mat3 inverse() const;
    std::array<double, 2> apply(double x, double y) const;

    bool operator==(const Mat3&) const = default;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Interval&) const = default;
};

/// Affine augmentation parameters. The transform is
///   T(center + translation) * R(rotation) * Shear(sx, sy) * Scale(cx, cy) * T(-center)
/// and maps input coordinates to output coordinates.
struct AffineParams {
    double rotation_deg = 0.0;
    std::array<double, 2> shear{0.0, 0.0};
    std::array<double, 2> scale{1.0, 1.0};
    std::array<double, 2> translation{0.0, 0.0};
    Interpolation interpolation = Interpolation::linear;

    Mat3 matrix(std::size_t rows, std::size_t cols) const;
    bool operator==(const AffineParams&) const = default;
};

struct AffineRanges {
    Interval rotation_deg{-10.0, 10.0};
    Interval shear{-0.5, 0.5};
    Interval scale{0.75, 1.5};
    Interval translation{0.0, 0.0};
    bool operator==(const AffineRanges&) const = default;
};

/// Exponentiated polynomial bias field. Coefficients are ordered by total
/// degree d = 0..order and, within a degree, by descending power of u:
///   1, u, v, u^2, uv, v^2, u^3, u^2 v, u v^2, v^3, ...
/// with u (columns) and v (rows) normalised to [-1, 1].
struct BiasFieldParams {
    int order = 3;
    std::vector<double> coefficients;

    static std::size_t coefficient_count(int order);
    /// log-field P(u, v)
    double log_field(double u, double v) const;
    bool operator==(const BiasFieldParams&) const = default;
};

struct BiasRanges {
    int order = 3;
    Interval coefficient{-0.3, 0.3};
    bool operator==(const BiasRanges&) const = default;
};

/// Rigid motion of the object from the event's onset line onward.
struct MotionEvent {
    double onset = 0.5;  ///< fraction of k-space lines, in (0, 1)
    double rotation_deg = 0.0;
    std::array<double, 2> translation{0.0, 0.0};
    bool operator==(const MotionEvent&) const = default;
};

struct MotionParams {
    std::vector<MotionEvent> events;  ///< strictly increasing onsets
    bool operator==(const MotionParams&) const = default;
};

struct MotionRanges {
    int min_events = 1;
    int max_events = 2;
    Interval onset{0.55, 0.9};
    Interval rotation_deg{-4.0, 4.0};
    Interval translation{-4.0, 4.0};
    bool operator==(const MotionRanges&) const = default;
};

enum class SeedPolicy {
    per_sample,  ///< each sample draws its own parameters from a child stream
    per_batch,   ///< all samples of a batch share one draw
};

/// Which operators run and how their parameters are drawn. Operators always
/// run in the fixed order geometric -> bias -> motion.
struct AugmentationSpec {
    bool geometric = false;
    bool bias = false;
    bool motion = false;
    AffineRanges affine;
    BiasRanges bias_ranges;
    MotionRanges motion_ranges;
    SeedPolicy seed_policy = SeedPolicy::per_sample;

    static AugmentationSpec none() { return {}; }
    static AugmentationSpec geometric_only();
    static AugmentationSpec mri_only();
    static AugmentationSpec all();
    bool empty() const { return !geometric && !bias && !motion; }
    bool operator==(const AugmentationSpec&) const = default;
};

/// Parameters drawn by one compose_and_apply call.
struct AppliedRecord {
    std::optional<AffineParams> affine;
    std::optional<BiasFieldParams> bias;
    std::optional<MotionParams> motion;

    bool empty() const { return !affine && !bias && !motion; }
    bool spatial() const { return affine.has_value(); }
    bool operator==(const AppliedRecord&) const = default;
};

/// Precomputed resampling: per output pixel up to four (source, weight)
/// taps. Applying it is linear in the input, so its transpose carries
/// gradients back through a warp.
class SamplingMap {
public:
    SamplingMap(std::size_t rows, std::size_t cols, const Mat3& forward, Interpolation interp);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    void apply(std::span<const double> in, std::span<double> out, double fill = 0.0) const;
    /// grad_in += M^T grad_out
    void apply_transpose(std::span<const double> grad_out, std::span<double> grad_in) const;

    bool operator==(const SamplingMap&) const = default;

private:
    struct Tap {
        std::array<std::int32_t, 4> src{-1, -1, -1, -1};
        std::array<double, 4> w{0, 0, 0, 0};
    };
    std::size_t rows_;
    std::size_t cols_;
    std::vector<Tap> taps_;
};

AffineParams sample_affine(SeededRng& rng, const AffineRanges& ranges = {});
BiasFieldParams sample_bias_field(SeededRng& rng, const BiasRanges& ranges = {});
MotionParams sample_motion(SeededRng& rng, const MotionRanges& ranges = {});

/// Resample with out-of-domain pixels set to `fill` (0 by default).
Grid<double> warp(const Grid<double>& in, const Mat3& forward, Interpolation interp, double fill = 0.0);

Image2D apply_affine(const Image2D& image, const AffineParams& p);
Image2D apply_affine(const Image2D& image, const Mat3& forward, Interpolation interp);
/// Nearest-neighbour warp regardless of p.interpolation.
BinMask apply_affine_to_mask(const BinMask& mask, const AffineParams& p);
ProbMask apply_affine_to_mask(const ProbMask& mask, const AffineParams& p);

Image2D apply_bias_field(const Image2D& image, const BiasFieldParams& b);
/// The multiplicative field exp(P(u, v)) sampled on the pixel grid.
Grid<double> bias_field(std::size_t rows, std::size_t cols, const BiasFieldParams& b);

/// Block-spliced k-space motion. K-space lines are phase-encode rows in
/// centred order (line l has frequency l - rows/2). Event e replaces lines
/// [floor(onset_e * rows), floor(onset_{e+1} * rows)) with the spectrum of
/// the image moved by that event's rigid transform; the last event runs to
/// the final line. Returns the real part of the inverse transform.
Image2D apply_kspace_motion(const Image2D& image, const MotionParams& m);
void validate(const MotionParams& m);

std::pair<Image2D, AppliedRecord> compose_and_apply(const Image2D& image, const AugmentationSpec& spec,
                                                    SeededRng& rng);
/// Replays a recorded draw on another image (same dimensions).
Image2D replay(const Image2D& image, const AppliedRecord& record);

/// Sampling map of the record's spatial component, for warping predictions.
std::optional<SamplingMap> spatial_map(const AppliedRecord& record, std::size_t rows, std::size_t cols);

}  // namespace augda
