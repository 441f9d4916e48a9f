#pragma once

#include <string>
#include <vector>

namespace dgdata {

/// Dense row-major tensor of 64-bit floats, rank 1 to 3.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0);

    static Tensor scalar(double v);
    static Tensor from(std::vector<int> s, std::vector<double> d);
    static Tensor zeros_like(const Tensor& t);

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    long long numel() const { return static_cast<long long>(data.size()); }

    double& operator()(int i) { return data[static_cast<size_t>(i)]; }
    double operator()(int i) const { return data[static_cast<size_t>(i)]; }
    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double& operator()(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double operator()(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

} // namespace dgdata
