#ifndef FINNET_ADAM_HPP
#define FINNET_ADAM_HPP

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "finnet/tensor.hpp"

namespace finnet {

template <typename T>
struct AdamConfig {
    T learning_rate = T(0.001);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
};

template <typename T>
using NamedParam = std::pair<std::string, TensorT<T>>;

/// Bias-corrected Adam over a fixed parameter list.
template <typename T>
class Adam {
  public:
    Adam(std::vector<NamedParam<T>> params, AdamConfig<T> cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (auto& [name, p] : params_) {
            first_.emplace_back(p.size(), T(0));
            second_.emplace_back(p.size(), T(0));
        }
    }

    void set_learning_rate(T lr) { cfg_.learning_rate = lr; }
    T learning_rate() const { return cfg_.learning_rate; }
    std::int64_t step_count() const { return step_; }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step() {
        std::string missing;
        for (auto& [name, p] : params_)
            if (!p.has_grad()) missing += missing.empty() ? name : ", " + name;
        if (!missing.empty()) throw Error("adam step with missing gradients for: " + missing);
        ++step_;
        T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
        T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
        for (size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k].second;
            auto& g = p.grad();
            for (std::int64_t i = 0; i < p.size(); ++i) {
                if (!std::isfinite(static_cast<double>(g[i])))
                    throw Error("non-finite gradient for parameter " + params_[k].first);
                T& m = first_[k][i];
                T& v = second_[k][i];
                m = cfg_.beta1 * m + (T(1) - cfg_.beta1) * g[i];
                v = cfg_.beta2 * v + (T(1) - cfg_.beta2) * g[i] * g[i];
                T mhat = m / bc1;
                T vhat = v / bc2;
                p.data()[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
    }

  private:
    std::vector<NamedParam<T>> params_;
    AdamConfig<T> cfg_;
    std::int64_t step_ = 0;
    std::vector<std::vector<T>> first_, second_;
};

/// Fan-in-scaled uniform init (He-style): U(-sqrt(2/fan_in), +sqrt(2/fan_in)).
template <typename T>
void init_fan_in(TensorT<T>& t, std::int64_t fan_in, std::mt19937_64& rng) {
    double bound = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(u(rng));
}

}  // namespace finnet

#endif
