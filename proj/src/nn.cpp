#include "dgdata/nn.hpp"

#include <cmath>

#include "dgdata/errors.hpp"

namespace dgdata {

void AdamConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("adam: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("adam: beta1 must be in [0,1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("adam: beta2 must be in [0,1)");
    if (eps <= 0.0) throw ConfigError("adam: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("adam: weight_decay must be >= 0");
}

void adam_step(Parameter& p, const AdamConfig& cfg) {
    p.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (size_t i = 0; i < p.value.data.size(); ++i) {
        double g = p.grad.data[i];
        double m = cfg.beta1 * p.moment1.data[i] + (1.0 - cfg.beta1) * g;
        double v = cfg.beta2 * p.moment2.data[i] + (1.0 - cfg.beta2) * g * g;
        p.moment1.data[i] = m;
        p.moment2.data[i] = v;
        double mhat = m / bc1;
        double vhat = v / bc2;
        double theta = p.value.data[i];
        p.value.data[i] = theta - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                            cfg.weight_decay * theta);
    }
}

namespace {
Tensor uniform_init(std::vector<int> shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}
} // namespace

LinearLayer::LinearLayer(const std::string& name, int in_dim, int out_dim, Rng& init) {
    double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    weight = Parameter(name + ".W", uniform_init({in_dim, out_dim}, bound, init));
    bias = Parameter(name + ".b", Tensor({out_dim}));
}

Conv1dLayer::Conv1dLayer(const std::string& name, int in_channels, int out_channels, int kernel,
                         int stride_, Rng& init)
    : stride(stride_) {
    double fan_in = static_cast<double>(in_channels * kernel);
    double fan_out = static_cast<double>(out_channels * kernel);
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    kernels = Parameter(name + ".K", uniform_init({out_channels, in_channels, kernel}, bound, init));
    bias = Parameter(name + ".b", Tensor({out_channels}));
}

BatchNorm1d::BatchNorm1d(const std::string& name, int channels)
    : gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor({channels})),
      running_mean(Tensor({channels})),
      running_var(Tensor({channels}, 1.0)) {}

DeepHead::DeepHead(const std::string& name, int in_dim, int hidden, int out_dim, Rng& init)
    : fc1(name + ".fc1", in_dim, hidden, init),
      bn(name + ".bn", hidden),
      fc2(name + ".fc2", hidden, out_dim, init) {}

} // namespace dgdata
