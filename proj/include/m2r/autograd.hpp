#pragma once

// Helpers for writing differentiable primitives. Used by ops.cpp and by the
// fused kernels that live next to their modules (selective scan, Top-K).

#include <initializer_list>
#include <span>
#include <utility>

#include "m2r/tensor.hpp"

namespace m2r::autograd {

// True when a tape is active and at least one defined input requires a
// gradient, i.e. the op has to record a backward closure.
template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape::current() == nullptr) return false;
    for (const Tensor<T>* t : inputs)
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    return false;
}

// Records `fn(out_grad)` on the current tape. The closure is skipped at replay
// time when nothing downstream produced a gradient for `out`.
template <typename T, typename Fn>
void record(Tensor<T>& out, Fn&& fn) {
    Tape* tape = Tape::current();
    out.mark_recorded(tape);
    tape->record([out, fn = std::forward<Fn>(fn)]() mutable {
        if (!out.has_grad()) return;
        fn(std::span<const T>(out.grad()));
    });
}

// Gradient buffer of an input, or an empty span when it takes no gradient.
// Takes the handle by const reference because closures capture inputs by
// value; the buffer lives in the shared storage either way.
template <typename T>
std::span<T> grad_of(const Tensor<T>& t) {
    if (!t.defined() || !t.requires_grad()) return {};
    Tensor<T> handle = t;
    return handle.ensure_grad();
}

}  // namespace m2r::autograd
