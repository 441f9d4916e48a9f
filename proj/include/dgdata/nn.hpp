#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "dgdata/rng.hpp"
#include "dgdata/tape.hpp"
#include "dgdata/tensor.hpp"

namespace dgdata {

/// Trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor moment1;
    Tensor moment2;
    long long step = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(Tensor::zeros_like(value)),
          moment1(Tensor::zeros_like(value)),
          moment2(Tensor::zeros_like(value)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
    Var use(Tape& tape) { return tape.bound_leaf(value, &grad); }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.2;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0005;

    void validate() const;
};

/// One bias-corrected Adam update with decoupled weight decay.
void adam_step(Parameter& p, const AdamConfig& cfg);

/// Steps a fixed set of parameters together.
class Adam {
public:
    Adam() = default;
    Adam(AdamConfig cfg, std::vector<Parameter*> params)
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }
    void step() {
        for (Parameter* p : params_) adam_step(*p, cfg_);
    }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamConfig cfg_;
    std::vector<Parameter*> params_;
};

/// Named non-trainable buffers (running statistics and the like) for checkpointing.
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

struct LinearLayer {
    Parameter weight;
    Parameter bias;

    LinearLayer() = default;
    LinearLayer(const std::string& name, int in_dim, int out_dim, Rng& init);

    Var forward(Tape& tape, Var x) { return linear(x, weight.use(tape), bias.use(tape)); }
    void params(std::vector<Parameter*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
    void buffers(NamedTensors&) {}
};

struct Conv1dLayer {
    Parameter kernels;
    Parameter bias;
    int stride = 1;

    Conv1dLayer() = default;
    Conv1dLayer(const std::string& name, int in_channels, int out_channels, int kernel,
                int stride_, Rng& init);

    Var forward(Tape& tape, Var x) {
        return bias_channel(conv1d(x, kernels.use(tape), stride), bias.use(tape));
    }
    void params(std::vector<Parameter*>& out) {
        out.push_back(&kernels);
        out.push_back(&bias);
    }
    void buffers(NamedTensors&) {}
};

struct BatchNorm1d {
    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    // Slow running-stat average: eval-mode features stay steady between
    // epochs instead of tracking single-batch noise.
    double momentum = 0.02;
    double eps = 1e-5;

    BatchNorm1d() = default;
    explicit BatchNorm1d(const std::string& name, int channels);

    Var forward(Tape& tape, Var x, bool train_mode) {
        return batchnorm1d(x, gamma.use(tape), beta.use(tape), running_mean, running_var,
                           train_mode, momentum, eps);
    }
    void params(std::vector<Parameter*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
    void buffers(NamedTensors& out) {
        out.emplace_back(gamma.name + ".running_mean", &running_mean);
        out.emplace_back(gamma.name + ".running_var", &running_var);
    }
};

/// Constraint head used under adversarial training: linear, batch norm, ReLU,
/// linear. Simple constraint heads use a bare LinearLayer instead.
struct DeepHead {
    LinearLayer fc1;
    BatchNorm1d bn;
    LinearLayer fc2;

    DeepHead() = default;
    DeepHead(const std::string& name, int in_dim, int hidden, int out_dim, Rng& init);

    Var forward(Tape& tape, Var x, bool train_mode) {
        return fc2.forward(tape, relu(bn.forward(tape, fc1.forward(tape, x), train_mode)));
    }
    void params(std::vector<Parameter*>& out) {
        fc1.params(out);
        bn.params(out);
        fc2.params(out);
    }
    void buffers(NamedTensors& out) { bn.buffers(out); }
};

} // namespace dgdata
