#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "widin/errors.hpp"
#include "widin/rng.hpp"

namespace widin {

// Dense row-major matrix of doubles. Row vectors are 1 x n tensors.
// All numeric state in the library is carried by this type.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw ShapeError("negative tensor dimension");
    }
    Tensor(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (static_cast<size_t>(r) * c != data.size())
            throw ShapeError("tensor data length does not match shape");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    static Tensor identity(int n) {
        Tensor t(n, n);
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    static Tensor row(std::vector<double> d) {
        const int n = static_cast<int>(d.size());
        return Tensor(1, n, std::move(d));
    }

    static Tensor gaussian(int r, int c, RngStream& rng, double stddev = 1.0) {
        Tensor t(r, c);
        for (auto& v : t.data) v = stddev * rng.next_gaussian();
        return t;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---- plain (non-differentiable) matrix math ------------------------------
// Reductions run in fixed element order; results are bitwise reproducible.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Tensor out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            double* orow = &out.data[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline Tensor row_of(const Tensor& a, int r) {
    if (r < 0 || r >= a.rows) throw ShapeError("row_of: index out of range");
    Tensor out(1, a.cols);
    for (int j = 0; j < a.cols; ++j) out.at(0, j) = a.at(r, j);
    return out;
}

inline void set_row(Tensor& a, int r, const Tensor& v) {
    if (v.rows != 1 || v.cols != a.cols || r < 0 || r >= a.rows)
        throw ShapeError("set_row: bad shapes");
    for (int j = 0; j < a.cols; ++j) a.at(r, j) = v.at(0, j);
}

// Unit-normalize a row vector; the differentiable version lives in the graph.
inline Tensor l2_normalized(const Tensor& v) {
    const double n = norm(v);
    if (n == 0.0) throw DegenerateInput("l2_normalize: zero-norm input");
    return scale(v, 1.0 / n);
}

inline int argmax_row(const Tensor& t, int r) {
    int best = 0;
    for (int j = 1; j < t.cols; ++j)
        if (t.at(r, j) > t.at(r, best)) best = j;
    return best;
}

// Content checksum over shape + value bits; used by frozen-ness tests and
// the artifact container.
inline uint64_t checksum(const Tensor& t) {
    uint64_t h = fnv1a64(&t.rows, sizeof(t.rows));
    h = fnv1a64(&t.cols, sizeof(t.cols), h);
    if (!t.data.empty()) h = fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
    return h;
}

inline uint64_t checksum(const std::vector<const Tensor*>& ts) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor* t : ts) {
        const uint64_t c = checksum(*t);
        h = fnv1a64(&c, sizeof(c), h);
    }
    return h;
}

}  // namespace widin
