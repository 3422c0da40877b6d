#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "augda/core.hpp"
#include "augda/layers.hpp"

namespace augda::nn {

/// U-Net segmenter configuration.
///
/// Level i of the encoder has min(base_filters * 2^i, max_filters) filters;
/// the bottleneck sits at level `depth`. The `paper()` profile is depth 4 with
/// 256 filters at the bottleneck, the desk profile depth 3 with 64.
struct SegmenterConfig {
    int depth = 3;
    int base_filters = 8;
    int max_filters = 64;
    double dropout = 0.2;  ///< applied after the bottleneck block
    /// Initial foreground probability: the head bias starts at its logit.
    double foreground_prior = 0.01;
    /// Activation maps forming the discriminator input h. Valid names:
    /// "enc<i>", "bottleneck", "dec<i>". Maps are average-pooled to the
    /// bottleneck grid and concatenated along channels.
    std::vector<std::string> feature_tap{"bottleneck"};

    static SegmenterConfig desk();
    static SegmenterConfig paper();
    /// Smallest profile, used for gradient checks.
    static SegmenterConfig tiny();

    int filters(int level) const;
    int feature_channels() const;
    std::string canonical() const;
    void validate() const;
    bool operator==(const SegmenterConfig&) const = default;
};

struct DiscriminatorConfig {
    int n_domains = 2;
    std::vector<int> conv_channels{4, 8, 16, 32};  ///< 3x3, stride 2 each
    std::vector<int> hidden{64, 32};
    double dropout = 0.5;
    double leaky_slope = 0.2;
    bool zero_head = false;  ///< zero-initialise the output layer

    std::string canonical() const;
    bool operator==(const DiscriminatorConfig&) const = default;
};

/// Flat copy of a network's parameters and buffers.
struct ParameterSnapshot {
    struct Record {
        std::string name;
        std::array<int, 4> shape{0, 0, 0, 0};
        std::vector<double> data;
        bool trainable = true;
        bool operator==(const Record&) const = default;
    };
    std::vector<Record> records;

    const Record* find(const std::string& name) const;
    bool operator==(const ParameterSnapshot&) const = default;
};

/// Shared parameter bookkeeping for the two networks.
class Network {
public:
    virtual ~Network() = default;
    Network() = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    const std::vector<Parameter*>& parameters() const { return params_; }
    Parameter& parameter(const std::string& name);

    /// Each entry is an exact parameter name, a dotted prefix ("enc0"
    /// matches "enc0.*"), or "*" for everything. An entry matching nothing
    /// throws std::invalid_argument; an empty list is a no-op.
    void freeze(std::span<const std::string> selectors);
    void unfreeze(std::span<const std::string> selectors);
    void freeze_all();
    void unfreeze_all();
    bool all_frozen() const;

    void zero_grad();
    ParameterSnapshot snapshot() const;
    /// Throws on missing names or shape mismatches.
    void load(const ParameterSnapshot& snap);
    std::size_t trainable_count() const;

protected:
    void register_parameters(std::vector<Parameter*> params);

private:
    void set_frozen(std::span<const std::string> selectors, bool frozen);
    std::vector<Parameter*> params_;
};

/// Everything a segmenter forward produced, kept for backward.
struct SegmenterPass {
    Tensor logits;    ///< [N,1,H,W], cropped to the input size
    Tensor probs;     ///< sigmoid(logits)
    Tensor features;  ///< h, [N, feature_channels, H'/2^depth, W'/2^depth]

    std::array<int, 4> input_shape{};
    std::array<int, 4> padded_shape{};
    std::vector<Sequential::Caches> enc, dec;
    std::vector<LayerCache> pool, up, tap_pool;
    Sequential::Caches bottleneck, head;
    LayerCache dropout, sigmoid;
    std::vector<int> skip_channels;
};

class Segmenter final : public Network {
public:
    Segmenter(SegmenterConfig cfg, SeededRng& init);

    const SegmenterConfig& config() const { return cfg_; }
    /// Reflect-pads to a multiple of 2^depth and crops the output back.
    SegmenterPass forward(const Tensor& x, Mode mode, SeededRng* dropout_rng = nullptr);
    /// Accumulates parameter gradients. `d_features` may be null.
    void backward(const SegmenterPass& pass, const Tensor& d_probs, const Tensor* d_features = nullptr);
    /// Shape of h for a given input size.
    std::array<int, 4> feature_shape(int n, int rows, int cols) const;

private:
    int tap_index(const std::string& name) const;

    SegmenterConfig cfg_;
    std::vector<Sequential> enc_, dec_;
    std::vector<MaxPool2x2> pool_;
    std::vector<ConvTranspose2x2> up_;
    Sequential bottleneck_, head_;
    Dropout dropout_;
    Sigmoid sigmoid_;
    std::vector<int> taps_;  // 0..depth-1 enc, depth bottleneck, depth+1+i dec<i>
    std::vector<AvgPool> tap_pool_;
};

struct DiscriminatorPass {
    Tensor logits;  ///< [N, n_domains, 1, 1]
    Sequential::Caches caches;
};

class Discriminator final : public Network {
public:
    /// `feature_shape` is the per-sample (C, H, W) of h.
    Discriminator(DiscriminatorConfig cfg, std::array<int, 3> feature_shape, SeededRng& init);

    const DiscriminatorConfig& config() const { return cfg_; }
    std::array<int, 3> feature_shape() const { return feature_shape_; }
    DiscriminatorPass forward(const Tensor& h, Mode mode, SeededRng* dropout_rng = nullptr);
    /// Returns d loss / d h.
    Tensor backward(const DiscriminatorPass& pass, const Tensor& d_logits);

private:
    DiscriminatorConfig cfg_;
    std::array<int, 3> feature_shape_;
    Sequential body_;
};

/// Stacks images into an [N,1,H,W] tensor.
Tensor to_tensor(std::span<const Image2D> images);
Tensor to_tensor(const Image2D& image);
ProbMask to_prob_mask(const Tensor& probs, int n);

/// Evaluation-mode segmentation of one image.
std::pair<ProbMask, Tensor> segment(Segmenter& f, const Image2D& image);
/// Evaluation-mode domain logits for one feature tensor.
std::vector<double> discriminate(Discriminator& d, const Tensor& h);

/// Checkpoint container.
///
/// Layout (little-endian): magic "AUGDACK1", u64 config hash, string stage
/// tag, u32 network count; per network: string name, u32 record count; per
/// record: string name, u8 trainable, 4 x i32 shape, f64 data. Strings are
/// u32 length + bytes.
struct Checkpoint {
    std::string stage;
    std::uint64_t config_hash = 0;
    ParameterSnapshot segmenter;
    std::optional<ParameterSnapshot> discriminator;
    bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error when `expected_hash` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {});

}  // namespace augda::nn
