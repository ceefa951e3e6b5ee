#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gastgrn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;

    double* grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad.data();
    }
};

/// Shared handle to a dense row-major array of doubles.
///
/// Copies alias the same storage. Parameters are leaves with `requires_grad`
/// set; every op applied to them while gradient recording is enabled appends
/// an entry to the thread's tape.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
        }
        if (numel_of(shape) != values.size()) {
            throw ShapeError("shape " + to_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value) {
        auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor eye(std::size_t n) {
        auto t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
        return t;
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    /// Size of dimension `axis`; negative values count from the end.
    std::size_t dim(int axis) const { return impl_->shape[normalize_axis(axis)]; }

    std::size_t normalize_axis(int axis) const {
        const int r = static_cast<int>(rank());
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) {
            throw std::out_of_range("axis " + std::to_string(axis) + " invalid for shape " + to_string(shape()));
        }
        return static_cast<std::size_t>(axis);
    }

    std::span<const double> values() const { return impl_->data; }
    std::span<double> mutable_values() { return impl_->data; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }

    double at(std::initializer_list<std::size_t> index) const {
        if (index.size() != rank()) throw ShapeError("index rank mismatch for shape " + to_string(shape()));
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (auto i : index) {
            if (i >= impl_->shape[axis]) throw std::out_of_range("tensor index out of range");
            flat = flat * impl_->shape[axis] + i;
            ++axis;
        }
        return impl_->data[flat];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() { return {impl_->grad_buffer(), impl_->data.size()}; }
    void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }
    void clear_grad() {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }

    /// Deep copy without gradient or tape history.
    Tensor clone() const { return Tensor(shape(), impl_->data); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Define-by-run record of differentiable operations for one thread.
class Tape {
public:
    struct Entry {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        std::function<void()> backward;
    };

    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    void record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
                std::function<void()> backward) {
        entries_.push_back({std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    void clear() { entries_.clear(); }

    bool enabled() const { return enabled_; }
    void set_enabled(bool flag) { enabled_ = flag; }

private:
    std::vector<Entry> entries_;
    bool enabled_ = true;
};

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard() : previous_(Tape::current().enabled()) { Tape::current().set_enabled(false); }
    ~NoGradGuard() { Tape::current().set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Runs reverse accumulation from a scalar `loss` and consumes the tape.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward() requires a scalar loss");
    }
    auto& tape = Tape::current();
    const auto& entries = tape.entries();
    std::size_t end = entries.size();
    while (end > 0 && entries[end - 1].output != loss.impl()) --end;
    if (end == 0) {
        if (loss.requires_grad()) {
            // loss is itself a leaf
            loss.impl()->grad_buffer()[0] += 1.0;
            tape.clear();
            return;
        }
        throw std::invalid_argument("backward() loss was not produced on the tape");
    }
    loss.impl()->grad_buffer()[0] += 1.0;
    for (std::size_t i = end; i-- > 0;) {
        const auto& entry = entries[i];
        if (!entry.output->grad.empty()) entry.backward();
    }
    tape.clear();
}

}  // namespace gastgrn
