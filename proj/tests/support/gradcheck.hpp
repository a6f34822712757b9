#pragma once

// Central finite-difference oracle for scalar functions of tensors. It only
// calls the forward function, so it stays independent of every backward rule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mutelab/numerics/tensor.hpp"

namespace mutelab::testing {

using DTensor = BasicTensor<double>;
using ScalarFn = std::function<DTensor(const std::vector<DTensor>&)>;

struct GradCheckResult {
    double worst_relative = 0.0;
    std::size_t checked = 0;
    std::string worst_at;
};

inline std::vector<double> finite_difference(const ScalarFn& fn, std::vector<DTensor> inputs,
                                             std::size_t which, double step,
                                             std::size_t max_coords = 0, std::size_t stride = 1) {
    const std::size_t n = (inputs[which].numel() + stride - 1) / stride;
    const std::size_t limit = max_coords ? std::min(max_coords, n) : n;
    std::vector<double> out(limit, 0.0);
    for (std::size_t c = 0; c < limit; ++c) {
        const std::size_t i = c * stride;
        auto data = inputs[which].mutable_data();
        const double saved = data[i];
        data[i] = saved + step;
        const double plus = fn(inputs).item();
        data[i] = saved - step;
        const double minus = fn(inputs).item();
        data[i] = saved;
        out[c] = (plus - minus) / (2.0 * step);
    }
    return out;
}

// Relative error with an absolute floor: |a-b| / max(|b|, floor).
inline double relative_error(double autodiff, double oracle, double floor) {
    return std::abs(autodiff - oracle) / std::max(std::abs(oracle), floor);
}

// Compares backward() against finite differences on every input flagged
// requires_grad, visiting coordinates 0, stride, 2*stride, ... Returns the
// worst relative error seen.
inline GradCheckResult grad_check(const ScalarFn& fn, const std::vector<DTensor>& inputs,
                                  double step = 1e-5, double abs_floor = 1e-6,
                                  std::size_t max_coords = 0, std::size_t stride = 1) {
    GradCheckResult result;
    const auto loss = fn(inputs);
    const auto grads = backward(loss);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        const auto analytic = grads[inputs[k]];
        const auto numeric = finite_difference(fn, inputs, k, step, max_coords, stride);
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double err = relative_error(analytic[i * stride], numeric[i], abs_floor);
            ++result.checked;
            if (err > result.worst_relative) {
                result.worst_relative = err;
                result.worst_at = "input " + std::to_string(k) + "[" + std::to_string(i * stride) +
                                  "] ad=" + std::to_string(analytic[i * stride]) +
                                  " fd=" + std::to_string(numeric[i]);
            }
        }
    }
    return result;
}

inline DTensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = dist(rng);
    return DTensor::from(std::move(shape), std::move(data), requires_grad);
}

}  // namespace mutelab::testing
