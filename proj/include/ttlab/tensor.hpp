#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ttlab/errors.hpp"

namespace ttlab {

// Dense float32 tensor, flat row-major storage, channels-first layout for
// images (C,H,W). The grad buffer is allocated lazily by the graph.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0f);
    }

    Tensor(std::vector<int> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape product " +
                             std::to_string(numel_of(shape)));
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 1) throw ShapeError("dimension must be >= 1, got " + std::to_string(d));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline float l1_norm(const std::vector<float>& v) {
    float s = 0.0f;
    for (float x : v) s += std::fabs(x);
    return s;
}

inline float l2_norm(const std::vector<float>& v) {
    float s = 0.0f;
    for (float x : v) s += x * x;
    return std::sqrt(s);
}

inline float linf_dist(const std::vector<float>& a, const std::vector<float>& b) {
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline float l2_dist(const std::vector<float>& a, const std::vector<float>& b) {
    float s = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        float d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Argmax with ties broken by lower index.
inline int argmax(const std::vector<float>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

// Numerically stable softmax of a logit vector.
inline std::vector<float> softmax_vec(const std::vector<float>& z) {
    float m = z[0];
    for (float v : z) m = std::max(m, v);
    std::vector<float> p(z.size());
    float sum = 0.0f;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (float& v : p) v /= sum;
    return p;
}

}  // namespace ttlab
