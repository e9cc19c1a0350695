#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace acvae {

// Dense row-major tensor. Rank is dynamic but almost everything here is a
// matrix [rows, cols] or a vector [n].
template <class S>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> sh) : shape(std::move(sh)) {
        data.assign(count(shape), S(0));
    }
    Tensor(std::initializer_list<std::size_t> sh)
        : Tensor(std::vector<std::size_t>(sh)) {}

    static std::size_t count(const std::vector<std::size_t>& sh) {
        std::size_t n = 1;
        for (std::size_t d : sh) n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    S* row(std::size_t r) { return data.data() + r * cols(); }
    const S* row(std::size_t r) const { return data.data() + r * cols(); }

    S& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    S at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(S(0)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

inline std::string shape_str(const std::vector<std::size_t>& sh) {
    std::string s = "[";
    for (std::size_t i = 0; i < sh.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(sh[i]);
    }
    return s + "]";
}

// out[m,n] += a[m,k] * b[n,k]^T  (both row-major; the inner product runs over
// contiguous rows of both operands)
template <class S>
void addmm_nt(S* out, const S* a, const S* b, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        S* oi = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* bj = b + j * k;
            S acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            oi[j] += acc;
        }
    }
}

// out[n,k] += a[m,n]^T * b[m,k]
template <class S>
void addmm_tn(S* out, const S* a, const S* b, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * n;
        const S* bi = b + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            S aij = ai[j];
            if (aij == S(0)) continue;
            S* oj = out + j * k;
            for (std::size_t p = 0; p < k; ++p) oj[p] += aij * bi[p];
        }
    }
}

// out[m,k] += a[m,n] * b[n,k]
template <class S>
void addmm_nn(S* out, const S* a, const S* b, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * n;
        S* oi = out + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            S aij = ai[j];
            if (aij == S(0)) continue;
            const S* bj = b + j * k;
            for (std::size_t p = 0; p < k; ++p) oi[p] += aij * bj[p];
        }
    }
}

} // namespace acvae
