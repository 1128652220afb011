#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace servenet {

// Ordered list of positive extents. The element count is the product of the
// extents; a rank-0 shape denotes a scalar (one element).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::vector<std::size_t> dims);

    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t element_count() const;
    const std::vector<std::size_t>& dims() const { return dims_; }

    std::string to_string() const; // e.g. "(110, 200)"

    bool operator==(const Shape& other) const { return dims_ == other.dims_; }
    bool operator!=(const Shape& other) const { return !(*this == other); }

private:
    std::vector<std::size_t> dims_;
};

// Dense array of 64-bit floats in row-major order. All operations below are
// pure functions of their inputs; tensors are safe to share across threads
// for reading.
//
// 64-bit precision is fixed: gradient checks against finite differences need
// step sizes around 1e-5, which 32-bit floats cannot resolve. There is no
// implicit broadcasting; binary operations require identical shapes.
class Tensor {
public:
    Tensor() : shape_(), data_(1, 0.0) {} // rank-0 scalar zero
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double value);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.rank(); }
    std::size_t dim(std::size_t axis) const { return shape_.dim(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Unchecked row-major offsets for rank-2 / rank-3 access in inner loops.
    std::size_t index2(std::size_t i, std::size_t j) const {
        return i * shape_.dim(1) + j;
    }
    std::size_t index3(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * shape_.dim(1) + j) * shape_.dim(2) + k;
    }
    std::size_t index4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return ((i * shape_.dim(1) + j) * shape_.dim(2) + k) * shape_.dim(3) + l;
    }
    double& at(std::size_t i, std::size_t j) { return data_[index2(i, j)]; }
    double at(std::size_t i, std::size_t j) const { return data_[index2(i, j)]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[index3(i, j, k)]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[index3(i, j, k)]; }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[index4(i, j, k, l)];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[index4(i, j, k, l)];
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Scalar activations
// ---------------------------------------------------------------------------

// Logistic sigmoid, computed in the branch that never exponentiates a
// positive argument, so large |x| cannot overflow.
double sigmoid(double x);
double relu(double x);

// ---------------------------------------------------------------------------
// Tensor operations
// ---------------------------------------------------------------------------

// (m,k) x (k,p) -> (m,p). Throws DimensionError naming both shapes on any
// rank or inner-extent mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh_map(const Tensor& a);
Tensor sigmoid_map(const Tensor& a);
Tensor relu_map(const Tensor& a);

enum class EwOp { add, sub, mul, tanh, sigmoid, relu };

// Dispatcher over the pointwise operations above. Binary ops require b with
// a's shape; unary ops require b == nullptr.
Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr);

// Same flat data under a new shape; element counts must agree.
Tensor reshape(const Tensor& a, Shape s);

// In-place helpers for gradient accumulation (same-shape add, scalar scale).
void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& t, double factor);

} // namespace servenet
