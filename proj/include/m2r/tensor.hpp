#pragma once

// Dense row-major tensors and the eager gradient tape.
//
// A Tensor is a cheap handle onto shared storage. Primitive operations never
// write into their inputs; they allocate a fresh output and, when a Tape is
// active and some input requires a gradient, append a backward closure to
// that tape. Tape::backward replays the closures in reverse recording order,
// which is a valid topological order because every output is recorded after
// its inputs exist.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace m2r {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value);
    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    // Direct write access. Only for leaves: initialization, optimizer updates,
    // tests. Never call on a tensor some recorded op has already consumed.
    std::span<T> mutable_data() { return impl_->data; }
    T item() const;

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad; }
    // Allocates a zero gradient buffer on first use.
    std::span<T> ensure_grad();
    void zero_grad();

    // Copy of the values with no gradient and no tape linkage.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    // Autograd bookkeeping used by the primitive implementations.
    Tape* recorded_on() const noexcept { return impl_ ? impl_->tape : nullptr; }
    void mark_recorded(Tape* tape);

private:
    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
        Tape* tape = nullptr;
    };
    std::shared_ptr<Impl> impl_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    void record(std::function<void()> backward_fn);
    std::size_t size() const noexcept { return entries_.size(); }
    void clear() noexcept { entries_.clear(); }

    // Seeds d(loss)/d(loss) = 1, replays every entry in reverse and clears
    // the tape. Leaves end up with their gradients accumulated in grad().
    template <typename T>
    void backward(Tensor<T>& loss);

    // The tape ops record onto on this thread, or nullptr.
    static Tape* current() noexcept;

private:
    friend class TapeScope;
    std::vector<std::function<void()>> entries_;
};

// Makes a tape current on this thread for the lifetime of the scope.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    ~TapeScope();

private:
    Tape* previous_;
};

// Disables recording for the lifetime of the scope (inference).
class NoGradScope {
public:
    NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;
    ~NoGradScope();

private:
    Tape* previous_;
};

// Runs backward on the tape that recorded the loss.
template <typename T>
void backward(Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace m2r
