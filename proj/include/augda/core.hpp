#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "augda/rng.hpp"

namespace augda {

/// Dense row-major 2D array.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Grid(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) throw std::invalid_argument("Grid: data size mismatch");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    const std::vector<T>& vec() const { return data_; }

    bool same_shape(const auto& other) const {
        return rows_ == other.rows() && cols_ == other.cols();
    }
    bool operator==(const Grid&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Physical pixel size in millimetres.
struct Spacing {
    double row_mm = 1.0;
    double col_mm = 1.0;
    bool operator==(const Spacing&) const = default;
};

inline constexpr std::size_t kMinImageSide = 8;

/// Single-channel image with physical metadata.
class Image2D {
public:
    Image2D() = default;
    Image2D(Grid<double> pixels, Spacing spacing = {}, int domain_id = 0);

    const Grid<double>& pixels() const { return pixels_; }
    Grid<double>& mutable_pixels() { return pixels_; }
    Spacing spacing() const { return spacing_; }
    int domain_id() const { return domain_id_; }
    std::size_t rows() const { return pixels_.rows(); }
    std::size_t cols() const { return pixels_.cols(); }

    /// Same metadata, new pixel data (validated).
    Image2D with_pixels(Grid<double> pixels) const;
    /// max - min of the pixel values.
    double dynamic_range() const;

    bool operator==(const Image2D&) const = default;

private:
    Grid<double> pixels_;
    Spacing spacing_;
    int domain_id_ = 0;
};

/// Per-pixel foreground probability; entries in [0, 1].
class ProbMask {
public:
    ProbMask() = default;
    explicit ProbMask(Grid<double> probs);

    const Grid<double>& probs() const { return probs_; }
    std::size_t rows() const { return probs_.rows(); }
    std::size_t cols() const { return probs_.cols(); }

    bool operator==(const ProbMask&) const = default;

private:
    Grid<double> probs_;
};

/// Binary label map; entries exactly 0 or 1.
class BinMask {
public:
    BinMask() = default;
    explicit BinMask(Grid<std::uint8_t> labels);
    BinMask(std::size_t rows, std::size_t cols) : labels_(rows, cols, 0) {}

    const Grid<std::uint8_t>& labels() const { return labels_; }
    std::size_t rows() const { return labels_.rows(); }
    std::size_t cols() const { return labels_.cols(); }
    std::size_t count() const;
    bool any() const { return count() > 0; }
    void set(std::size_t r, std::size_t c, bool on) { labels_(r, c) = on ? 1 : 0; }
    bool at(std::size_t r, std::size_t c) const { return labels_(r, c) != 0; }

    /// The mask as a {0,1}-valued probability map.
    ProbMask as_prob() const;

    bool operator==(const BinMask&) const = default;

private:
    Grid<std::uint8_t> labels_;
};

struct LabeledSample {
    std::string id;
    Image2D image;
    BinMask mask;

    LabeledSample() = default;
    LabeledSample(std::string id, Image2D image, BinMask mask);
};

/// Target-domain sample: no labels. `partner` holds the second acquisition
/// of the same subject in paired mode.
struct UnlabeledSample {
    std::string id;
    Image2D image;
    std::optional<Image2D> partner;

    UnlabeledSample() = default;
    UnlabeledSample(std::string id, Image2D image, std::optional<Image2D> partner = std::nullopt);
};

struct SplitFractions {
    double train = 0.5;
    double val = 0.25;
    double test = 0.25;
    bool operator==(const SplitFractions&) const = default;
};

/// Index partition of a sample list.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    SplitFractions fractions;

    std::size_t total() const { return train.size() + val.size() + test.size(); }
};

/// Thresholds with the >= convention. Throws on non-finite entries.
BinMask binarize(const ProbMask& mask, double threshold = 0.5);

/// Partition `count` items. Sizes use largest-remainder rounding of the
/// fractions; membership is a seeded shuffle. Each partition is sorted.
DatasetSplit make_splits(std::size_t count, SplitFractions fractions, SeededRng& rng);

template <class Sample>
DatasetSplit make_splits(std::span<const Sample> samples, SplitFractions fractions, SeededRng& rng) {
    if (samples.empty()) throw std::invalid_argument("make_splits: empty sample list");
    return make_splits(samples.size(), fractions, rng);
}

/// Largest-remainder apportionment of `count` over `weights` (summing to 1).
std::vector<std::size_t> largest_remainder(std::size_t count, std::span<const double> weights);

template <class T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& indices) {
    std::vector<T> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(items.at(i));
    return out;
}

}  // namespace augda
