#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace vmt {

/// Dense row-major tensor of doubles with value semantics.
/// Shapes are held as explicit dimension lists; rank 0 is represented as a
/// single-element tensor of shape {}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::int64_t> shape);
    static Tensor full(std::vector<std::int64_t> shape, double value);
    static Tensor scalar(double value);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(int i) const;
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(std::initializer_list<std::int64_t> idx);
    double at(std::initializer_list<std::int64_t> idx) const;

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::int64_t> shape) const&;
    Tensor reshaped(std::vector<std::int64_t> shape) &&;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    double item() const;

    // In-place helpers used by optimizers and initializers.
    void fill(double v);
    void add_scaled(const Tensor& other, double s);  // *this += s * other

    double sum() const;
    double sum_sq() const;
    double max_abs() const;
    double l2_norm() const;

private:
    std::int64_t offset(std::initializer_list<std::int64_t> idx) const;

    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// Elementwise / linear-algebra kernels shared by the autodiff layer.
// All operate on plain tensors and allocate their outputs.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m,k] x [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// [k,m]^T x [k,n] -> [m,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// x treated as [rows, in] with rows = numel/in; w is [out, in]: y = x w^T.
Tensor linear_nobias(const Tensor& x, const Tensor& w);

Tensor permuted(const Tensor& x, const std::vector<int>& axes);

double dot(const Tensor& a, const Tensor& b);
double cosine_similarity(const Tensor& a, const Tensor& b);
Tensor l2_normalized(const Tensor& a);

}  // namespace vmt
