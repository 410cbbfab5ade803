#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace psep {

using cplx = std::complex<double>;

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }
    std::size_t size() const { return v.size(); }
};

// (channels x frames x bins) tensor, bin-minor.
template <typename T>
struct Tensor3 {
    std::size_t channels = 0;
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::vector<T> v;

    Tensor3() = default;
    Tensor3(std::size_t i, std::size_t m, std::size_t k, T fill = T{})
        : channels(i), frames(m), bins(k), v(i * m * k, fill) {}

    T& at(std::size_t i, std::size_t m, std::size_t k) { return v[(i * frames + m) * bins + k]; }
    const T& at(std::size_t i, std::size_t m, std::size_t k) const {
        return v[(i * frames + m) * bins + k];
    }
    bool same_shape(const Tensor3& o) const {
        return channels == o.channels && frames == o.frames && bins == o.bins;
    }
    std::size_t size() const { return v.size(); }
};

using RealTensor = Tensor3<double>;
using ComplexTensor = Tensor3<cplx>;

// (channels x frames x bins x features), feature-minor.
struct Tensor4 {
    std::size_t channels = 0;
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::size_t features = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(std::size_t i, std::size_t m, std::size_t k, std::size_t f, double fill = 0.0)
        : channels(i), frames(m), bins(k), features(f), v(i * m * k * f, fill) {}

    double& at(std::size_t i, std::size_t m, std::size_t k, std::size_t f) {
        return v[((i * frames + m) * bins + k) * features + f];
    }
    double at(std::size_t i, std::size_t m, std::size_t k, std::size_t f) const {
        return v[((i * frames + m) * bins + k) * features + f];
    }
    std::size_t size() const { return v.size(); }
};

}  // namespace psep
