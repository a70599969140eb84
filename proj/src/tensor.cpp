#include "m2r/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "m2r/errors.hpp"

namespace m2r {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t extent : shape)
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
}

thread_local Tape* g_current_tape = nullptr;

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    impl_->data.assign(m2r::numel(shape), T{0});
    impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    if (m2r::numel(shape) != data.size())
        throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) +
                             " elements");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
    Tensor out(std::move(shape));
    std::fill(out.impl_->data.begin(), out.impl_->data.end(), value);
    return out;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
    return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::mark_recorded(Tape* tape) {
    impl_->requires_grad = true;
    impl_->tape = tape;
}

template class Tensor<float>;
template class Tensor<double>;

Tape::~Tape() {
    if (g_current_tape == this) g_current_tape = nullptr;
}

void Tape::record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
}

Tape* Tape::current() noexcept {
    return g_current_tape;
}

template <typename T>
void Tape::backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    if (loss.recorded_on() != this) throw ContractError("loss was not recorded on this tape");
    auto seed = loss.ensure_grad();
    seed[0] += T{1};
    // Detach the entries first so a throwing closure still leaves the tape empty.
    std::vector<std::function<void()>> entries;
    entries.swap(entries_);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) (*it)();
}

template void Tape::backward<float>(Tensor<float>&);
template void Tape::backward<double>(Tensor<double>&);

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) {
    g_current_tape = &tape;
}

TapeScope::~TapeScope() {
    g_current_tape = previous_;
}

NoGradScope::NoGradScope() : previous_(g_current_tape) {
    g_current_tape = nullptr;
}

NoGradScope::~NoGradScope() {
    g_current_tape = previous_;
}

template <typename T>
void backward(Tensor<T>& loss) {
    Tape* tape = Tape::current();
    if (tape == nullptr) throw ContractError("backward called with no active tape");
    tape->backward(loss);
}

template void backward<float>(Tensor<float>&);
template void backward<double>(Tensor<double>&);

}  // namespace m2r
