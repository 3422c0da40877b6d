#include "augda/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace augda {

Image2D::Image2D(Grid<double> pixels, Spacing spacing, int domain_id)
    : pixels_(std::move(pixels)), spacing_(spacing), domain_id_(domain_id) {
    if (pixels_.rows() < kMinImageSide || pixels_.cols() < kMinImageSide)
        throw std::invalid_argument("Image2D: both sides must be at least 8 pixels");
    if (!(spacing_.row_mm > 0.0) || !(spacing_.col_mm > 0.0))
        throw std::invalid_argument("Image2D: spacing must be positive");
    for (double v : pixels_.values())
        if (!std::isfinite(v)) throw std::invalid_argument("Image2D: non-finite pixel");
}

Image2D Image2D::with_pixels(Grid<double> pixels) const {
    return Image2D(std::move(pixels), spacing_, domain_id_);
}

double Image2D::dynamic_range() const {
    auto [lo, hi] = std::minmax_element(pixels_.values().begin(), pixels_.values().end());
    return *hi - *lo;
}

ProbMask::ProbMask(Grid<double> probs) : probs_(std::move(probs)) {
    for (double v : probs_.values())
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ProbMask: entry outside [0,1]");
}

BinMask::BinMask(Grid<std::uint8_t> labels) : labels_(std::move(labels)) {
    for (auto v : labels_.values())
        if (v > 1) throw std::invalid_argument("BinMask: labels must be 0 or 1");
}

std::size_t BinMask::count() const {
    return static_cast<std::size_t>(std::count(labels_.values().begin(), labels_.values().end(), 1));
}

ProbMask BinMask::as_prob() const {
    Grid<double> g(rows(), cols());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = labels_[i];
    return ProbMask(std::move(g));
}

LabeledSample::LabeledSample(std::string id_, Image2D image_, BinMask mask_)
    : id(std::move(id_)), image(std::move(image_)), mask(std::move(mask_)) {
    if (mask.rows() != image.rows() || mask.cols() != image.cols())
        throw std::invalid_argument("LabeledSample: mask and image dimensions differ");
}

UnlabeledSample::UnlabeledSample(std::string id_, Image2D image_, std::optional<Image2D> partner_)
    : id(std::move(id_)), image(std::move(image_)), partner(std::move(partner_)) {
    if (partner) {
        if (partner->rows() != image.rows() || partner->cols() != image.cols())
            throw std::invalid_argument("UnlabeledSample: partner dimensions differ");
        if (partner->domain_id() == image.domain_id())
            throw std::invalid_argument("UnlabeledSample: partner must come from a distinct domain");
    }
}

BinMask binarize(const ProbMask& mask, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("binarize: threshold must lie in (0,1)");
    const auto& p = mask.probs();
    Grid<std::uint8_t> out(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!std::isfinite(p[i])) throw std::invalid_argument("binarize: non-finite probability");
        out[i] = p[i] >= threshold ? 1 : 0;
    }
    return BinMask(std::move(out));
}

std::vector<std::size_t> largest_remainder(std::size_t count, std::span<const double> weights) {
    std::vector<std::size_t> sizes(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = weights[i] * static_cast<double>(count);
        sizes[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
        rem.emplace_back(quota - static_cast<double>(sizes[i]), i);
        assigned += sizes[i];
    }
    // Larger remainder first; ties go to the earlier partition.
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < count && k < rem.size(); ++k, ++assigned) ++sizes[rem[k].second];
    return sizes;
}

DatasetSplit make_splits(std::size_t count, SplitFractions fractions, SeededRng& rng) {
    if (count == 0) throw std::invalid_argument("make_splits: empty sample list");
    const std::array<double, 3> w{fractions.train, fractions.val, fractions.test};
    for (double f : w)
        if (!(f >= 0.0)) throw std::invalid_argument("make_splits: fractions must be nonnegative");
    if (std::abs(w[0] + w[1] + w[2] - 1.0) > 1e-9)
        throw std::invalid_argument("make_splits: fractions must sum to 1");

    const auto sizes = largest_remainder(count, w);
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    DatasetSplit split;
    split.fractions = fractions;
    auto it = order.begin();
    auto take = [&](std::vector<std::size_t>& dst, std::size_t n) {
        dst.assign(it, it + static_cast<std::ptrdiff_t>(n));
        std::sort(dst.begin(), dst.end());
        it += static_cast<std::ptrdiff_t>(n);
    };
    take(split.train, sizes[0]);
    take(split.val, sizes[1]);
    take(split.test, sizes[2]);
    return split;
}

}  // namespace augda
