#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "m2r/ops.hpp"
#include "m2r/tensor.hpp"

namespace m2r {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

// Trainable tensors of a module tree, in a stable registration order.
template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) leaf.
template <typename T>
Tensor<T> uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    ops::fill_uniform(t, static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))), rng);
    t.set_requires_grad(true);
    return t;
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
    Tensor<T> t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

template <typename T>
void add_param(ParamList<T>& out, const std::string& prefix, const std::string& name, const Tensor<T>& t) {
    out.push_back({prefix.empty() ? name : prefix + "." + name, t});
}

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.tensor.numel();
    return total;
}

}  // namespace m2r
