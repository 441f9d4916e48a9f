#include "dgdata/features.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "dgdata/errors.hpp"

namespace dgdata {

namespace {
int conv_out(int len, int kernel, int stride) {
    if (kernel > len) {
        throw ConfigError("feature extractor: stage input length " + std::to_string(len) +
                          " shorter than kernel " + std::to_string(kernel));
    }
    return (len - kernel) / stride + 1;
}
} // namespace

void FeatureExtractorConfig::validate() const {
    if (in_channels < 1 || window < 1) throw ConfigError("feature extractor: bad input shape");
    if (conv1_channels < 1 || conv2_channels < 1) throw ConfigError("feature extractor: bad channels");
    if (conv1_kernel < 1 || conv2_kernel < 1) throw ConfigError("feature extractor: bad kernel");
    if (pool1 < 1 || pool2 < 1) throw ConfigError("feature extractor: bad pool width");
    feature_dim();
}

int FeatureExtractorConfig::feature_dim() const {
    int l1 = conv_out(window, conv1_kernel, 1);
    int p1 = conv_out(l1, pool1, pool1);
    int l2 = conv_out(p1, conv2_kernel, 1);
    int p2 = conv_out(l2, pool2, pool2);
    return conv2_channels * p2;
}

FeatureExtractor::FeatureExtractor(const FeatureExtractorConfig& cfg, Rng& init) : cfg_(cfg) {
    cfg_.validate();
    conv1_ = Conv1dLayer("fx.conv1", cfg_.in_channels, cfg_.conv1_channels, cfg_.conv1_kernel, 1, init);
    bn1_ = BatchNorm1d("fx.bn1", cfg_.conv1_channels);
    conv2_ = Conv1dLayer("fx.conv2", cfg_.conv1_channels, cfg_.conv2_channels, cfg_.conv2_kernel, 1, init);
    bn2_ = BatchNorm1d("fx.bn2", cfg_.conv2_channels);
}

Var FeatureExtractor::forward(Tape& tape, Var x, bool train_mode) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 3 || xv.dim(1) != cfg_.in_channels || xv.dim(2) != cfg_.window) {
        throw DimensionError("feature extractor: expected input [n," +
                             std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.window) +
                             "], got " + xv.shape_str());
    }
    Var h = conv1_.forward(tape, x);
    h = relu(bn1_.forward(tape, h, train_mode));
    h = maxpool1d(h, cfg_.pool1, cfg_.pool1);
    h = conv2_.forward(tape, h);
    h = relu(bn2_.forward(tape, h, train_mode));
    h = maxpool1d(h, cfg_.pool2, cfg_.pool2);
    return flatten(h);
}

void FeatureExtractor::params(std::vector<Parameter*>& out) {
    conv1_.params(out);
    bn1_.params(out);
    conv2_.params(out);
    bn2_.params(out);
}

void FeatureExtractor::buffers(NamedTensors& out) {
    bn1_.buffers(out);
    bn2_.buffers(out);
}

Tensor stack_windows(const std::vector<const WindowedSample*>& windows) {
    if (windows.empty()) throw DataError("stack_windows: empty batch");
    int ch = windows.front()->values.dim(0);
    int w = windows.front()->values.dim(1);
    Tensor out({static_cast<int>(windows.size()), ch, w});
    for (size_t i = 0; i < windows.size(); ++i) {
        const Tensor& v = windows[i]->values;
        if (v.dim(0) != ch || v.dim(1) != w) {
            throw DimensionError("stack_windows: inconsistent window shapes");
        }
        std::copy(v.data.begin(), v.data.end(),
                  out.data.begin() + static_cast<long long>(i) * ch * w);
    }
    return out;
}

void FeatureRange::update(const Tensor& features) {
    if (frozen) return;
    if (features.rank() != 2) throw DimensionError("FeatureRange::update expects [n,D]");
    int n = features.dim(0), d = features.dim(1);
    if (!initialized) {
        min = Tensor({d}, std::numeric_limits<double>::infinity());
        max = Tensor({d}, -std::numeric_limits<double>::infinity());
        initialized = true;
    } else if (min.dim(0) != d) {
        throw DimensionError("FeatureRange::update dimension changed");
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            double v = features(i, j);
            if (v < min(j)) min(j) = v;
            if (v > max(j)) max(j) = v;
        }
    }
}

Tensor FeatureRange::squash(const Tensor& features) const {
    if (!initialized) throw StateError("FeatureRange::squash before any update");
    if (features.rank() != 2 || features.dim(1) != min.dim(0)) {
        throw DimensionError("FeatureRange::squash dimension mismatch");
    }
    int n = features.dim(0), d = features.dim(1);
    Tensor out({n, d});
    for (int j = 0; j < d; ++j) {
        double lo = min(j), width = max(j) - min(j);
        for (int i = 0; i < n; ++i) {
            double v;
            if (width <= 0.0) {
                v = 0.5;
            } else {
                v = (features(i, j) - lo) / width;
                v = std::clamp(v, 0.0, 1.0);
            }
            out(i, j) = v;
        }
    }
    return out;
}

Var squash01(Var features, const FeatureRange& range) {
    Tape& t = *features.tape;
    const Tensor& fv = t.value(features);
    Tensor out = range.squash(fv);
    int n = fv.dim(0), d = fv.dim(1);

    // mask: 1/(width) where the affine map is active, 0 where clipped or flat
    Tensor pass({n, d});
    for (int j = 0; j < d; ++j) {
        double lo = range.min(j), width = range.max(j) - range.min(j);
        for (int i = 0; i < n; ++i) {
            if (width > 0.0) {
                double raw = (fv(i, j) - lo) / width;
                pass(i, j) = (raw > 0.0 && raw < 1.0) ? 1.0 / width : 0.0;
            }
        }
    }
    bool ng = t.node(features.id).needs_grad;
    int fi = features.id;
    return t.emit(std::move(out), ng,
                  [fi, pass](Tape& tp, const Tape::Node& self) {
                      Tensor& gf = tp.node(fi).grad;
                      for (size_t i = 0; i < self.grad.data.size(); ++i) {
                          gf.data[i] += self.grad.data[i] * pass.data[i];
                      }
                  },
                  "squash01");
}

} // namespace dgdata
