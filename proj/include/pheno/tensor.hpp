#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace pheno {

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover every use in
// this project; higher ranks are storable but the 2-D accessors require
// rank 2. Tensors are value types; public operations leave entries finite
// unless their error contract fired.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    // Rank-2 from nested initializer lists.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vec(std::vector<double> v);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    int rows() const;
    int cols() const;

    double& operator()(int i, int j);
    double operator()(int i, int j) const;
    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);
    Tensor operator+(const Tensor& o) const;
    Tensor operator-(const Tensor& o) const;
    Tensor operator*(double s) const;

    double dot(const Tensor& o) const;
    double norm() const;
    double max_abs() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Standard matrix product a[m x k] * b[k x n]. Throws NumericError naming
// both shapes when the inner dimensions disagree.
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a[k x m]^T * b[k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Row-wise softmax with per-row max subtraction. Each output row is
// nonnegative and sums to 1.
Tensor softmax_rows(const Tensor& x);

// gain * (x - mean) / sqrt(var + eps) + bias over a rank-1 tensor,
// variance computed with 1/n. Requires n >= 2.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Elementwise x * sigmoid(x) (SiLU / Swish).
Tensor silu(const Tensor& x);
double silu(double x);

double sigmoid(double x);

} // namespace pheno
