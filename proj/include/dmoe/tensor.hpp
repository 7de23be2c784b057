// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dmoe/error.hpp"

namespace dmoe {

// Dense row-major tensor of 64-bit floats. Everything in the project runs
// at double precision in a fixed accumulation order so repeated runs are
// bit-identical.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<std::size_t>(numel())) {
            throw ShapeError("tensor: data length does not match shape");
        }
    }

    static Tensor zeros(std::vector<std::int64_t> s) {
        std::int64_t n = 1;
        for (std::int64_t d : s) n *= d;
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (std::int64_t d : shape) n *= d;
        return n;
    }

    std::int64_t ndim() const { return static_cast<std::int64_t>(shape.size()); }

    std::int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::int64_t cols() const { return shape.size() < 2 ? numel() : shape[1]; }

    double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * cols() + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * cols() + j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const Tensor& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(t.shape[i]);
    }
    return s + ")";
}

// Copy rows [row_begin, row_end) of a 2D tensor.
Tensor slice_rows(const Tensor& t, std::int64_t row_begin, std::int64_t row_end);

// Stack b's rows below a's (both 2D with equal column count).
Tensor vstack(const Tensor& a, const Tensor& b);

}  // namespace dmoe
