#include "m2r/losses.hpp"

#include <algorithm>
#include <cmath>

#include "m2r/autograd.hpp"
#include "m2r/errors.hpp"

namespace m2r {

template <typename T>
Tensor<T> loss_l1(const Tensor<T>& restored, const Tensor<T>& clean) {
    if (restored.shape() != clean.shape())
        throw DimensionError("loss_l1: " + to_string(restored.shape()) + " vs " + to_string(clean.shape()));
    return ops::mean(ops::abs(ops::sub(restored, clean)));
}

template <typename T>
Tensor<T> cv_squared(const Tensor<T>& v, double eps) {
    if (v.rank() != 1) throw DimensionError("cv_squared expects a vector, got " + to_string(v.shape()));
    const Tensor<T> centre = ops::mean(v);
    const Tensor<T> dev = ops::sub(v, centre);
    const Tensor<T> var = ops::mean(ops::mul(dev, dev));
    return ops::div(var, ops::add_scalar(ops::mul(centre, centre), static_cast<T>(eps)));
}

template <typename T>
Tensor<T> expert_weight_totals(const RoutingState<T>& state) {
    const std::size_t n = state.experts();
    Shape reduced(state.Se.rank(), 1);
    reduced[1] = n;
    return ops::reshape(ops::sum_to(state.Se, reduced), {n});
}

template <typename T>
std::vector<double> expert_counts(const RoutingState<T>& state) {
    const std::size_t n = state.experts(), area = state.positions();
    std::vector<double> counts(n, 0.0);
    const auto se = state.Se.data();
    for (std::size_t b = 0; b < state.batch(); ++b)
        for (std::size_t e = 0; e < n; ++e)
            for (std::size_t p = 0; p < area; ++p)
                if (se[(b * n + e) * area + p] != T{0}) counts[e] += 1.0;
    return counts;
}

namespace {

double cv_squared_value(const std::vector<double>& v, double eps) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return var / (mean * mean + eps);
}

}  // namespace

template <typename T>
Tensor<T> loss_balance(std::span<const RoutingState<T>> diagnostics, double eps) {
    if (diagnostics.empty()) throw ContractError("loss_balance needs at least one routing state");
    Tensor<T> total;
    for (const auto& state : diagnostics) {
        const Tensor<T> term = ops::add_scalar(cv_squared(expert_weight_totals(state), eps),
                                               static_cast<T>(cv_squared_value(expert_counts(state), eps)));
        total = total.defined() ? ops::add(total, term) : term;
    }
    return ops::mul_scalar(total, static_cast<T>(1.0 / static_cast<double>(diagnostics.size())));
}

template <typename T>
Tensor<T> loss_total(const Tensor<T>& l1, const Tensor<T>& balance, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("loss_total: lambda must be >= 0");
    if (!balance.defined()) return l1;
    return ops::add(l1, ops::mul_scalar(balance, static_cast<T>(lambda)));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    const auto z = logits.data();
    std::vector<T> probs(z.size());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= classes) throw ContractError("cross_entropy: label out of range");
        const auto row = z.subspan(b * classes, classes);
        const T top = *std::max_element(row.begin(), row.end());
        double norm = 0.0;
        for (std::size_t d = 0; d < classes; ++d) norm += std::exp(static_cast<double>(row[d] - top));
        for (std::size_t d = 0; d < classes; ++d)
            probs[b * classes + d] = static_cast<T>(std::exp(static_cast<double>(row[d] - top)) / norm);
        total += std::log(norm) - static_cast<double>(row[labels[b]] - top);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch)));
    if (autograd::needs_grad<T>({&logits})) {
        std::vector<std::size_t> owned(labels.begin(), labels.end());
        autograd::record(out, [logits, probs = std::move(probs), owned = std::move(owned), batch,
                               classes](std::span<const T> gy) {
            const auto gz = autograd::grad_of(logits);
            const T scale = gy[0] / static_cast<T>(batch);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t d = 0; d < classes; ++d) {
                    const T onehot = d == owned[b] ? T{1} : T{0};
                    gz[b * classes + d] += scale * (probs[b * classes + d] - onehot);
                }
        });
    }
    return out;
}

template <typename T>
std::vector<double> usage_histogram(std::span<const RoutingState<T>> diagnostics) {
    std::vector<double> hist;
    for (const auto& state : diagnostics) {
        const auto counts = expert_counts(state);
        if (hist.empty()) hist.assign(counts.size(), 0.0);
        if (counts.size() != hist.size()) throw DimensionError("usage_histogram: routers disagree on expert count");
        for (std::size_t e = 0; e < counts.size(); ++e) hist[e] += counts[e];
    }
    return hist;
}

#define M2R_INSTANTIATE_LOSSES(T)                                                        \
    template Tensor<T> loss_l1(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> cv_squared(const Tensor<T>&, double);                             \
    template Tensor<T> expert_weight_totals(const RoutingState<T>&);                     \
    template std::vector<double> expert_counts(const RoutingState<T>&);                  \
    template Tensor<T> loss_balance(std::span<const RoutingState<T>>, double);           \
    template Tensor<T> loss_total(const Tensor<T>&, const Tensor<T>&, double);           \
    template std::vector<double> usage_histogram(std::span<const RoutingState<T>>);       \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::size_t>);

M2R_INSTANTIATE_LOSSES(float)
M2R_INSTANTIATE_LOSSES(double)

#undef M2R_INSTANTIATE_LOSSES

}  // namespace m2r
