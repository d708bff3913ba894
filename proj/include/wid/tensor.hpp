// Dense row-major float32 tensor and the trainable-parameter wrapper.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "wid/common.hpp"

namespace wid {

struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) { data.assign(numel_of(shape), 0.0f); }
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw DimError("tensor data length does not match shape");
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor identity(int n) {
        Tensor t({n, n});
        for (int i = 0; i < n; ++i) t.data[static_cast<size_t>(i) * n + i] = 1.0f;
        return t;
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d < 0) throw DimError("negative dimension in shape");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

enum class ParamGroup { Base, Compactor };

// A trainable tensor. `group` selects the learning-rate/weight-decay bucket
// and is fixed at construction.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    ParamGroup group = ParamGroup::Base;

    Parameter() = default;
    Parameter(std::string n, Tensor v, ParamGroup g)
        : name(std::move(n)), value(std::move(v)), grad(Tensor(value.shape)), group(g) {}

    void zero_grad() { grad.zero(); }
};

}  // namespace wid
