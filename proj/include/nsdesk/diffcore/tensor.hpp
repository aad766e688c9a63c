#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "nsdesk/common/error.hpp"

namespace nsdesk {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += ",";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Allocator whose value-initialisation leaves arithmetic elements
// uninitialised, so buffers that are about to be overwritten skip the fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    using std::allocator<T>::allocator;
    template <typename U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using Buffer = std::vector<T, DefaultInitAllocator<T>>;

// Dense row-major array. A scalar is a tensor of shape [1].
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(numel(shape_), fill);
    }

    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_shape();
        if (data_.size() != numel(shape_)) {
            throw ShapeError("tensor: " + std::to_string(data_.size()) +
                             " values do not fill shape " + shape_str(shape_));
        }
    }

    // Contents are unspecified until written.
    static Tensor uninitialized(Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.check_shape();
        t.data_.resize(numel(t.shape_));
        return t;
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    static Tensor from(std::initializer_list<T> values) {
        return Tensor(Shape{values.size()}, std::vector<T>(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // 2-D element access.
    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    T item() const {
        if (data_.size() != 1) {
            throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
        }
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (numel(shape) != data_.size()) {
            throw ShapeError("reshape: " + shape_str(shape_) + " vs " + shape_str(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out = Tensor<U>::uninitialized(shape_);
        std::transform(data_.begin(), data_.end(), out.ptr(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_shape() const {
        for (std::size_t d : shape_) {
            if (d == 0) {
                throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape_));
            }
        }
    }

    Shape shape_;
    Buffer<T> data_;
};

}  // namespace nsdesk
