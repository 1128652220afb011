#include "servenet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "servenet/error.hpp"

namespace servenet {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             a.shape().to_string() + " vs " + b.shape().to_string());
    }
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
    std::vector<double> out(a.size());
    const double* src = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(src[i]);
    }
    return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor map_binary(const char* op, const Tensor& a, const Tensor& b, F f) {
    check_same_shape(op, a, b);
    std::vector<double> out(a.size());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(pa[i], pb[i]);
    }
    return Tensor(a.shape(), std::move(out));
}

} // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
    for (std::size_t d : dims_) {
        if (d == 0) {
            throw DimensionError("Shape: every extent must be >= 1, got " + to_string());
        }
    }
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    for (std::size_t d : dims_) {
        if (d == 0) {
            throw DimensionError("Shape: every extent must be >= 1, got " + to_string());
        }
    }
}

std::size_t Shape::dim(std::size_t axis) const {
    if (axis >= dims_.size()) {
        throw DimensionError("Shape: axis " + std::to_string(axis) + " out of range for " + to_string());
    }
    return dims_[axis];
}

std::size_t Shape::element_count() const {
    std::size_t n = 1;
    for (std::size_t d : dims_) {
        n *= d;
    }
    return n;
}

std::string Shape::to_string() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) {
            os << ", ";
        }
        os << dims_[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.element_count(), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.element_count()) {
        throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.to_string());
    }
}

Tensor Tensor::filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = value;
    }
    return t;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + a.shape().to_string() +
                             " x " + b.shape().to_string());
    }
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t p = b.dim(1);
    Tensor out(Shape{m, p});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * p;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = b.data() + t * p;
            for (std::size_t j = 0; j < p; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return map_binary("add", a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return map_binary("sub", a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return map_binary("mul", a, b, [](double x, double y) { return x * y; });
}

Tensor tanh_map(const Tensor& a) {
    return map_unary(a, [](double x) { return std::tanh(x); });
}

Tensor sigmoid_map(const Tensor& a) {
    return map_unary(a, [](double x) { return sigmoid(x); });
}

Tensor relu_map(const Tensor& a) {
    return map_unary(a, [](double x) { return relu(x); });
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b) {
    const bool binary = (op == EwOp::add || op == EwOp::sub || op == EwOp::mul);
    if (binary && b == nullptr) {
        throw ParameterError("elementwise: binary op requires a second operand");
    }
    if (!binary && b != nullptr) {
        throw ParameterError("elementwise: unary op takes a single operand");
    }
    switch (op) {
        case EwOp::add: return add(a, *b);
        case EwOp::sub: return sub(a, *b);
        case EwOp::mul: return mul(a, *b);
        case EwOp::tanh: return tanh_map(a);
        case EwOp::sigmoid: return sigmoid_map(a);
        case EwOp::relu: return relu_map(a);
    }
    throw ParameterError("elementwise: unknown op");
}

Tensor reshape(const Tensor& a, Shape s) {
    if (s.element_count() != a.size()) {
        throw DimensionError("reshape: element count mismatch " + a.shape().to_string() +
                             " -> " + s.to_string());
    }
    return Tensor(std::move(s), std::vector<double>(a.data(), a.data() + a.size()));
}

void add_inplace(Tensor& dst, const Tensor& src) {
    check_same_shape("add_inplace", dst, src);
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        d[i] += s[i];
    }
}

void scale_inplace(Tensor& t, double factor) {
    double* d = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
        d[i] *= factor;
    }
}

} // namespace servenet
