#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace latentdyn::diff {

using Dims = std::vector<std::size_t>;

inline std::size_t product(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
struct Tensor {
    Dims dims;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    Tensor(Dims d, std::vector<double> values, bool grad = false)
        : dims(std::move(d)), data(std::move(values)), requires_grad(grad) {
        for (auto n : dims)
            if (n == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(dims));
        if (product(dims) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match dims " + shape_string(dims));
    }

    static Tensor zeros(Dims d) {
        const auto n = product(d);
        return Tensor(std::move(d), std::vector<double>(n, 0.0));
    }

    static Tensor filled(Dims d, double v) {
        const auto n = product(d);
        return Tensor(std::move(d), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return dims.size(); }
    std::size_t rows() const { return dims.at(0); }
    std::size_t cols() const { return dims.at(1); }

    double operator[](std::size_t i) const { return data[i]; }
    double& operator[](std::size_t i) { return data[i]; }
    double at(std::size_t r, std::size_t c) const { return data[r * dims[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data[r * dims[1] + c]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

} // namespace latentdyn::diff
