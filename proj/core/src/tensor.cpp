#include "vmt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("Tensor: data size does not match shape " + shape_str());
    }
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::int64_t Tensor::dim(int i) const {
    if (i < 0) i += rank();
    if (i < 0 || i >= rank()) throw ShapeError("Tensor::dim: axis out of range");
    return shape_[static_cast<std::size_t>(i)];
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
    return data_[static_cast<std::size_t>(offset(idx))];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    return data_[static_cast<std::size_t>(offset(idx))];
}

std::int64_t Tensor::offset(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw ShapeError("Tensor::at: index rank mismatch");
    }
    std::int64_t off = 0;
    int i = 0;
    for (auto v : idx) {
        off = off * shape_[static_cast<std::size_t>(i)] + v;
        ++i;
    }
    return off;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const& {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape: element count mismatch " + shape_str());
    }
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) && {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape: element count mismatch " + shape_str());
    }
    return Tensor(std::move(shape), std::move(data_));
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item: tensor is not a scalar");
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_scaled(const Tensor& other, double s) {
    check_same_shape(*this, other, "add_scaled");
    const double* src = other.data();
    double* dst = data();
    for (std::int64_t i = 0; i < numel(); ++i) dst[i] += s * src[i];
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::sum_sq() const {
    double s = 0;
    for (double v : data_) s += v * v;
    return s;
}

double Tensor::max_abs() const {
    double m = 0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

double Tensor::l2_norm() const { return std::sqrt(sum_sq()); }

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    out.add_scaled(b, 1.0);
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    out.add_scaled(b, -1.0);
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a;
    double* dst = out.data();
    const double* src = b.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) dst[i] *= src[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    double* dst = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) dst[i] *= s;
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor out({a.dim(0), b.dim(1)});
    MatMap(out.data(), a.dim(0), b.dim(1)).noalias() =
        ConstMatMap(a.data(), a.dim(0), a.dim(1)) * ConstMatMap(b.data(), b.dim(0), b.dim(1));
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: incompatible shapes " + a.shape_str() + " x " +
                         b.shape_str());
    }
    Tensor out({a.dim(0), b.dim(0)});
    MatMap(out.data(), a.dim(0), b.dim(0)).noalias() =
        ConstMatMap(a.data(), a.dim(0), a.dim(1)) *
        ConstMatMap(b.data(), b.dim(0), b.dim(1)).transpose();
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw ShapeError("matmul_tn: incompatible shapes " + a.shape_str() + " x " +
                         b.shape_str());
    }
    Tensor out({a.dim(1), b.dim(1)});
    MatMap(out.data(), a.dim(1), b.dim(1)).noalias() =
        ConstMatMap(a.data(), a.dim(0), a.dim(1)).transpose() *
        ConstMatMap(b.data(), b.dim(0), b.dim(1));
    return out;
}

Tensor linear_nobias(const Tensor& x, const Tensor& w) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be 2-d");
    const std::int64_t in = w.dim(1);
    if (x.numel() % in != 0 || x.dim(-1) != in) {
        throw ShapeError("linear: input features " + x.shape_str() + " do not match weight " +
                         w.shape_str());
    }
    const std::int64_t rows = x.numel() / in;
    std::vector<std::int64_t> out_shape = x.shape();
    out_shape.back() = w.dim(0);
    Tensor out(std::move(out_shape));
    MatMap(out.data(), rows, w.dim(0)).noalias() =
        ConstMatMap(x.data(), rows, in) * ConstMatMap(w.data(), w.dim(0), w.dim(1)).transpose();
    return out;
}

Tensor permuted(const Tensor& x, const std::vector<int>& axes) {
    const int r = x.rank();
    if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: axes rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) {
            throw ShapeError("permute: invalid axes");
        }
        seen[static_cast<std::size_t>(a)] = true;
    }
    std::vector<std::int64_t> out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(axes[i]);

    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i) {
        in_strides[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
    }
    std::vector<std::int64_t> step(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) step[static_cast<std::size_t>(i)] = in_strides[axes[i]];

    Tensor out(out_shape);
    const double* src = x.data();
    double* dst = out.data();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    const std::int64_t n = out.numel();
    std::int64_t src_off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[src_off];
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            idx[du]++;
            src_off += step[du];
            if (idx[du] < out_shape[du]) break;
            src_off -= step[du] * out_shape[du];
            idx[du] = 0;
        }
    }
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    const double na = a.l2_norm();
    const double nb = b.l2_norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

Tensor l2_normalized(const Tensor& a) {
    const double n = a.l2_norm();
    if (n == 0.0) return a;
    return scale(a, 1.0 / n);
}

}  // namespace vmt
