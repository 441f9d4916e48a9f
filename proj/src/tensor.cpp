#include "dgdata/tensor.hpp"

#include <cmath>
#include <cstddef>

#include "dgdata/errors.hpp"

namespace dgdata {

namespace {
size_t shape_numel(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    data.assign(shape_numel(shape), fill);
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> d) {
    if (shape_numel(s) != d.size()) throw DimensionError("tensor data does not match shape");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape); }

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

} // namespace dgdata
