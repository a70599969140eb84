#pragma once

// Training objective: mean absolute error plus a load-balancing penalty on
// expert usage, mixed with weight lambda.

#include <cstddef>
#include <span>
#include <vector>

#include "m2r/dder.hpp"

namespace m2r {

// mean |restored - clean|, shape [1].
template <typename T>
Tensor<T> loss_l1(const Tensor<T>& restored, const Tensor<T>& clean);

// Var(v) / (Mean(v)^2 + eps) of a 1-D tensor with population variance.
template <typename T>
Tensor<T> cv_squared(const Tensor<T>& v, double eps);

// Per-expert aggregated selection weight w (sum of Se over images and
// pixels, differentiable) and activation count s (constant).
template <typename T>
Tensor<T> expert_weight_totals(const RoutingState<T>& state);
template <typename T>
std::vector<double> expert_counts(const RoutingState<T>& state);

// CV^2(w) + CV^2(s) for each router, averaged over routers. Only the w term
// carries a gradient. Throws ContractError on an empty list.
template <typename T>
Tensor<T> loss_balance(std::span<const RoutingState<T>> diagnostics, double eps = 1e-10);

// l1 + lambda * balance. balance may be undefined (no routers), in which
// case the result is l1.
template <typename T>
Tensor<T> loss_total(const Tensor<T>& l1, const Tensor<T>& balance, double lambda);

// Mean softmax cross-entropy of logits [B, D] against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels);

// Expert activation counts summed over all routers.
template <typename T>
std::vector<double> usage_histogram(std::span<const RoutingState<T>> diagnostics);

}  // namespace m2r
