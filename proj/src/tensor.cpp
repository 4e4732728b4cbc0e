#include "pheno/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pheno/error.hpp"

namespace pheno {

namespace {

int64_t shape_product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw NumericError("tensor shape has non-positive dimension");
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<int64_t>(data_.size()))
        throw NumericError("tensor data length does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    int m = static_cast<int>(rows.size());
    int n = m > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Tensor t({m, n});
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != n) throw NumericError("ragged matrix initializer");
        int j = 0;
        for (double v : row) t(i, j++) = v;
        ++i;
    }
    return t;
}

Tensor Tensor::vec(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

int Tensor::rows() const {
    if (rank() != 2) throw NumericError("rows() requires rank-2 tensor, have " + shape_str());
    return shape_[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw NumericError("cols() requires rank-2 tensor, have " + shape_str());
    return shape_[1];
}

double& Tensor::operator()(int i, int j) {
    return data_[static_cast<size_t>(i) * static_cast<size_t>(shape_[1]) + static_cast<size_t>(j)];
}

double Tensor::operator()(int i, int j) const {
    return data_[static_cast<size_t>(i) * static_cast<size_t>(shape_[1]) + static_cast<size_t>(j)];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw NumericError("shape mismatch in add: " + shape_str() + " vs " + o.shape_str());
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o)) throw NumericError("shape mismatch in sub: " + shape_str() + " vs " + o.shape_str());
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor Tensor::operator+(const Tensor& o) const {
    Tensor r = *this;
    r += o;
    return r;
}

Tensor Tensor::operator-(const Tensor& o) const {
    Tensor r = *this;
    r -= o;
    return r;
}

Tensor Tensor::operator*(double s) const {
    Tensor r = *this;
    r *= s;
    return r;
}

double Tensor::dot(const Tensor& o) const {
    if (size() != o.size()) throw NumericError("dot length mismatch: " + shape_str() + " vs " + o.shape_str());
    double s = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) s += data_[i] * o.data_[i];
    return s;
}

double Tensor::norm() const { return std::sqrt(dot(*this)); }

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw NumericError("matmul dimension mismatch: " + a.shape_str() + " x " + b.shape_str());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = &a.data()[static_cast<size_t>(i) * k];
        double* crow = &c.data()[static_cast<size_t>(i) * n];
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = &b.data()[static_cast<size_t>(l) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw NumericError("matmul_nt dimension mismatch: " + a.shape_str() + " x " + b.shape_str() + "^T");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = &a.data()[static_cast<size_t>(i) * k];
        double* crow = &c.data()[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) {
            const double* brow = &b.data()[static_cast<size_t>(j) * k];
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
            crow[j] = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
        throw NumericError("matmul_tn dimension mismatch: " + a.shape_str() + "^T x " + b.shape_str());
    const int m = a.cols(), k = a.rows(), n = b.cols();
    Tensor c({m, n});
    for (int l = 0; l < k; ++l) {
        const double* arow = &a.data()[static_cast<size_t>(l) * m];
        const double* brow = &b.data()[static_cast<size_t>(l) * n];
        for (int i = 0; i < m; ++i) {
            double* crow = &c.data()[static_cast<size_t>(i) * n];
            const double av = arow[i];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw NumericError("softmax_rows requires rank-2 tensor, have " + x.shape_str());
    const int m = x.rows(), n = x.cols();
    Tensor y({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(x(i, j) - mx);
            y(i, j) = e;
            z += e;
        }
        for (int j = 0; j < n; ++j) y(i, j) /= z;
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int64_t n = x.size();
    if (n < 2) throw NumericError("layer_norm requires length >= 2, have " + x.shape_str());
    if (gain.size() != n || bias.size() != n)
        throw NumericError("layer_norm gain/bias shape mismatch: " + x.shape_str());
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += x.at(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = x.at(i) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    Tensor y(x.shape());
    for (int64_t i = 0; i < n; ++i) y.at(i) = gain.at(i) * (x.at(i) - mean) * inv + bias.at(i);
    return y;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

Tensor silu(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) y.at(i) = silu(x.at(i));
    return y;
}

} // namespace pheno
