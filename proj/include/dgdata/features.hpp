#pragma once

#include <vector>

#include "dgdata/data.hpp"
#include "dgdata/nn.hpp"

namespace dgdata {

/// Two convolution blocks (conv -> batch norm -> ReLU -> max pool), flattened
/// into a fixed-length feature vector per window.
struct FeatureExtractorConfig {
    int in_channels = 6;
    int window = 90;
    int conv1_channels = 32;
    int conv1_kernel = 9;
    int pool1 = 2;
    int conv2_channels = 64;
    int conv2_kernel = 9;
    int pool2 = 2;

    void validate() const;
    /// Closed-form output length chain; throws if any stage collapses.
    int feature_dim() const;
};

class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(const FeatureExtractorConfig& cfg, Rng& init);

    /// [n, ch, W] -> [n, D], differentiable end to end.
    Var forward(Tape& tape, Var x, bool train_mode);

    int feature_dim() const { return cfg_.feature_dim(); }
    const FeatureExtractorConfig& config() const { return cfg_; }

    void params(std::vector<Parameter*>& out);
    void buffers(NamedTensors& out);

private:
    FeatureExtractorConfig cfg_;
    Conv1dLayer conv1_;
    BatchNorm1d bn1_;
    Conv1dLayer conv2_;
    BatchNorm1d bn2_;
};

/// Batch of windows stacked into one [n, ch, W] tensor.
Tensor stack_windows(const std::vector<const WindowedSample*>& windows);

/// Running per-dimension feature bounds; the reconstruction target squashes
/// features into [0,1] with these. Frozen after warmup.
struct FeatureRange {
    Tensor min;
    Tensor max;
    bool initialized = false;
    bool frozen = false;

    void update(const Tensor& features); // features [n, D]; no-op once frozen
    /// (f - min) / (max - min), clipped to [0,1]; zero-width dims map to 0.5.
    Tensor squash(const Tensor& features) const;
};

/// Differentiable counterpart of FeatureRange::squash: the bounds act as
/// constants, the gradient passes 1/(max-min) on unclipped dimensions.
Var squash01(Var features, const FeatureRange& range);

} // namespace dgdata
