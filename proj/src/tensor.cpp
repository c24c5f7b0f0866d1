#include "residual_lab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace rlab {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 3) {
        throw DimensionError("tensor rank must be 1 to 3, got " + std::to_string(shape.size()));
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// out (n x m) += A (n x inner) * B (inner x m), A(i, k) = pa[i * rs + k * cs].
// Four output rows share each load of a B row.
void gemm_rows(const double* pa, std::size_t rs, std::size_t cs, const double* __restrict pb,
               double* __restrict po, std::size_t n, std::size_t inner, std::size_t m) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        double* __restrict o0 = po + i * m;
        double* __restrict o1 = o0 + m;
        double* __restrict o2 = o1 + m;
        double* __restrict o3 = o2 + m;
        for (std::size_t k = 0; k < inner; ++k) {
            const double a0 = pa[i * rs + k * cs], a1 = pa[(i + 1) * rs + k * cs];
            const double a2 = pa[(i + 2) * rs + k * cs], a3 = pa[(i + 3) * rs + k * cs];
            const double* __restrict brow = pb + k * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double bv = brow[j];
                o0[j] += a0 * bv;
                o1[j] += a1 * bv;
                o2[j] += a2 * bv;
                o3[j] += a3 * bv;
            }
        }
    }
    for (; i < n; ++i) {
        double* __restrict orow = po + i * m;
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = pa[i * rs + k * cs];
            const double* __restrict brow = pb + k * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw DimensionError("shape " + shape_string() + " does not match " +
                             std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t m = n == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(n * m);
    for (const auto& r : rows) {
        if (r.size() != m) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({n, m}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows() needs a matrix, got " + shape_string());
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols() needs a matrix, got " + shape_string());
    return shape_[1];
}

std::span<double> Tensor::row(std::size_t i) {
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(i * c, c);
}

std::span<const double> Tensor::row(std::size_t i) const {
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(i * c, c);
}

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Tensor& Tensor::axpy(double s, const Tensor& other) {
    require_same_shape(*this, other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
    return *this;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ')';
    return os.str();
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

void require_matrix(const Tensor& a, const char* what) {
    if (a.rank() != 2) {
        throw DimensionError(std::string(what) + ": expected a matrix, got " + a.shape_string());
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
    if (b.rows() != inner) {
        throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " x " +
                             b.shape_string());
    }
    Tensor out({n, m});
    gemm_rows(a.data().data(), inner, 1, b.data().data(), out.data().data(), n, inner, m);
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    const std::size_t inner = a.rows(), n = a.cols(), m = b.cols();
    if (b.rows() != inner) {
        throw DimensionError("matmul_tn: leading dimensions disagree " + a.shape_string() +
                             " vs " + b.shape_string());
    }
    Tensor out({n, m});
    // a^T read in place: element (i, k) of a^T lives at a[k * n + i].
    gemm_rows(a.data().data(), 1, n, b.data().data(), out.data().data(), n, inner, m);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    if (b.cols() != a.cols()) {
        throw DimensionError("matmul_nt: trailing dimensions disagree " + a.shape_string() +
                             " vs " + b.shape_string());
    }
    // The row-streaming kernel vectorizes; a dot-product loop would not.
    return matmul(a, transpose(b));
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t n = a.rows(), m = a.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(j, i) = a(i, j);
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    auto o = out.data();
    auto pb = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= pb[i];
    return out;
}

double frobenius_norm(const Tensor& a) {
    // Scaled accumulation keeps norm(eta * A) == |eta| * norm(A) to rounding
    // even when entries are near the overflow/underflow limits.
    const double scale = max_abs(a);
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double acc = 0.0;
    for (double v : a.data()) {
        const double r = v / scale;
        acc += r * r;
    }
    return scale * std::sqrt(acc);
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    auto pa = a.data();
    auto pb = b.data();
    for (std::size_t i = 0; i < pa.size(); ++i) m = std::max(m, std::abs(pa[i] - pb[i]));
    return m;
}

bool all_finite(const Tensor& a) {
    return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) throw ParameterError("uniform_index: empty range");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return r % n;
}

double Rng::gaussian(double mean, double stddev) {
    if (stddev < 0.0) throw ParameterError("gaussian: negative standard deviation");
    double z;
    if (has_spare_) {
        has_spare_ = false;
        z = spare_;
    } else {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        z = u * f;
    }
    return mean + stddev * z;
}

Tensor gaussian_tensor(Rng& rng, std::vector<std::size_t> shape, double mean, double stddev) {
    if (stddev < 0.0) throw ParameterError("gaussian_tensor: negative standard deviation");
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.gaussian(mean, stddev);
    return t;
}

} // namespace rlab
