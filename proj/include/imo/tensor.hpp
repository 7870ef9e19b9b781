#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "imo/common.hpp"

namespace imo {

// N-dimensional row-major array with an optional same-shape gradient buffer.
// Copies share storage, so a tensor captured by a tape record and the same
// tensor held by a module see one data/grad pair.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false) {
        validate_shape(shape);
        shape_ = std::move(shape);
        data_ = std::make_shared<std::vector<T>>(numel(shape_), fill);
        set_requires_grad(requires_grad);
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
        validate_shape(shape);
        if (values.size() != numel(shape))
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        shape_ = std::move(shape);
        data_ = std::make_shared<std::vector<T>>(std::move(values));
        set_requires_grad(requires_grad);
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_ ? data_->size() : 0; }

    std::span<T> values() { return {data_->data(), data_->size()}; }
    std::span<const T> values() const { return {data_->data(), data_->size()}; }

    T item() const {
        if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not scalar");
        return (*data_)[0];
    }

    bool requires_grad() const { return grad_ != nullptr; }

    void set_requires_grad(bool on) {
        if (on && !grad_)
            grad_ = std::make_shared<std::vector<T>>(size(), T(0));
        else if (!on)
            grad_.reset();
    }

    std::span<T> grad() { return {grad_->data(), grad_->size()}; }
    std::span<const T> grad() const { return {grad_->data(), grad_->size()}; }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }

    // Deep copy of the value buffer; gradient state is not carried over.
    Tensor clone() const {
        Tensor out;
        out.shape_ = shape_;
        out.data_ = std::make_shared<std::vector<T>>(*data_);
        return out;
    }

    void assert_finite(const char* what) const {
        for (T v : *data_)
            if (!std::isfinite(static_cast<double>(v)))
                throw ValidationError(std::string("non-finite value in ") + what);
    }

private:
    static void validate_shape(const Shape& shape) {
        for (int d : shape)
            if (d < 1) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
};

// Ordered record of executed primitives. Eager execution makes the record a
// topological order, so one reverse sweep propagates all gradients; records
// accumulate into input grads additively.
template <typename T>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    template <typename F>
    void record(F&& fn) {
        if (recording_) records_.emplace_back(std::forward<F>(fn));
    }

    std::size_t size() const { return records_.size(); }

    void backward(Tensor<T>& loss) {
        if (loss.size() != 1)
            throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw ValidationError("backward: loss does not depend on any requires_grad tensor");
        loss.grad()[0] += T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

    void clear() { records_.clear(); }

private:
    std::vector<std::function<void()>> records_;
    bool recording_ = true;
};

}  // namespace imo
