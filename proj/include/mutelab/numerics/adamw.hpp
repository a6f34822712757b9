#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mutelab/numerics/tensor.hpp"

namespace mutelab {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Decoupled-weight-decay Adam over a fixed list of parameter tensors.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<BasicTensor<T>> params, AdamWConfig config)
        : params_(std::move(params)), config_(config) {
        for (const auto& p : params_) {
            first_.emplace_back(p.numel(), 0.0);
            second_.emplace_back(p.numel(), 0.0);
        }
    }

    // One update; grads[i] must match params[i] element for element.
    void step(const std::vector<std::vector<T>>& grads) {
        expects(grads.size() == params_.size(), "adamw: gradient count does not match parameter count");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            expects(grads[i].size() == params_[i].numel(),
                    "adamw: gradient shape mismatch for parameter " + std::to_string(i));
        }
        ++step_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto p = params_[i].mutable_data();
            auto& m = first_[i];
            auto& v = second_[i];
            const auto& g = grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                double value = static_cast<double>(p[j]);
                value -= config_.learning_rate * config_.weight_decay * value;
                const double gj = static_cast<double>(g[j]);
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
                v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
                const double mhat = m[j] / c1;
                const double vhat = v[j] / c2;
                value -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
                p[j] = static_cast<T>(value);
            }
        }
    }

    std::int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    const std::vector<double>& first_moment(std::size_t i) const { return first_.at(i); }
    const std::vector<double>& second_moment(std::size_t i) const { return second_.at(i); }

private:
    std::vector<BasicTensor<T>> params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
    std::int64_t step_ = 0;
};

}  // namespace mutelab
