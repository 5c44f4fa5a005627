#ifndef FINNET_GRADCHECK_HPP
#define FINNET_GRADCHECK_HPP

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "finnet/detector_loss.hpp"
#include "finnet/ops.hpp"

namespace finnet {

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 1e-4;
    bool passed = false;
};

/// Central-difference check of reverse-mode gradients at 64-bit precision.
/// `fn` must rebuild the scalar loss from the given leaf tensors on every
/// call (the tape is consumed by backward); any stochastic op inside must
/// reseed itself so repeated evaluations see identical randomness.
inline GradCheckReport check_gradients(
    const std::string& name, const std::function<Tensor64(std::vector<Tensor64>&)>& fn,
    std::vector<Tensor64> inputs, double h = 1e-5, double tolerance = 1e-4) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tensor64 loss = fn(inputs);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs) analytic.push_back(in.grad());

    // tape-free numeric passes
    for (auto& in : inputs) in.set_requires_grad(false);
    GradCheckReport rep;
    rep.name = name;
    rep.tolerance = tolerance;
    for (size_t t = 0; t < inputs.size(); ++t) {
        double* d = inputs[t].data();
        for (std::int64_t i = 0; i < inputs[t].size(); ++i) {
            double keep = d[i];
            d[i] = keep + h;
            double lp = fn(inputs).item();
            d[i] = keep - h;
            double lm = fn(inputs).item();
            d[i] = keep;
            double numeric = (lp - lm) / (2 * h);
            double a = analytic[t][static_cast<size_t>(i)];
            double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
        }
    }
    rep.passed = rep.max_rel_err <= tolerance;
    return rep;
}

namespace detail {

inline Tensor64 rand64(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (auto& e : v) e = u(rng);
    return Tensor64::from(std::move(shape), std::move(v));
}

/// Random magnitudes in [0.1, 1] with random sign; keeps values clear of
/// relu/leaky-relu kinks at the finite-difference step size.
inline Tensor64 rand64_off_kink(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (auto& e : v) e = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return Tensor64::from(std::move(shape), std::move(v));
}

/// Well-separated values (gap >> finite-difference step) so max-pool argmax
/// choices are stable under perturbation.
inline Tensor64 rand64_separated(Shape shape, std::mt19937_64& rng) {
    size_t n = static_cast<size_t>(numel(shape));
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
    std::shuffle(v.begin(), v.end(), rng);
    return Tensor64::from(std::move(shape), std::move(v));
}

}  // namespace detail

/// Finite-difference checks covering every differentiable op family the
/// networks use, repeated over `repeats` random shape draws each and
/// aggregated to one report per op. Deterministic in `seed`.
inline std::vector<GradCheckReport> standard_gradchecks(std::uint64_t seed, int repeats = 20) {
    std::vector<GradCheckReport> reports;
    std::mt19937_64 rng(seed);
    auto dim = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    auto merge = [&](GradCheckReport r) {
        for (auto& existing : reports) {
            if (existing.name != r.name) continue;
            existing.max_rel_err = std::max(existing.max_rel_err, r.max_rel_err);
            existing.passed = existing.passed && r.passed;
            return;
        }
        reports.push_back(std::move(r));
    };

    for (int rep = 0; rep < repeats; ++rep) {
        {
            int n = dim(1, 4), k = dim(1, 5), u = dim(2, 6);
            auto x = detail::rand64({n, k}, rng);
            auto w = detail::rand64({k, u}, rng);
            auto b = detail::rand64({u}, rng);
            Tensor64 target = Tensor64::zeros({n, u});
            for (int i = 0; i < n; ++i) target.data()[i * u + (i * 2) % u] = 1.0;
            merge(check_gradients(
                "dense_softmax_cce",
                [target](std::vector<Tensor64>& in) {
                    return categorical_cross_entropy(
                        softmax(add_rowvec(matmul(in[0], in[1]), in[2])), target);
                },
                {x, w, b}));
        }
        {
            int n = dim(1, 2), c = dim(1, 3), f = dim(1, 3), k = dim(1, 3);
            int h = k + dim(0, 3), wd = k + dim(0, 3);
            auto geom = detail::conv_geometry(h, wd, k, k, 1, Padding::Valid);
            auto x = detail::rand64({n, c, h, wd}, rng);
            auto w = detail::rand64({f, c, k, k}, rng, -0.5, 0.5);
            auto b = detail::rand64({f}, rng);
            Tensor64 target = Tensor64::zeros({n, f, geom.out_h, geom.out_w});
            merge(check_gradients(
                "conv2d_valid",
                [target](std::vector<Tensor64>& in) {
                    return mse(conv2d(in[0], in[1], in[2], 1, Padding::Valid), target);
                },
                {x, w, b}));
        }
        {
            int n = dim(1, 2), c = dim(1, 2), f = dim(1, 3), k = dim(1, 3), s = dim(1, 2);
            int h = k + dim(0, 4), wd = k + dim(0, 4);
            auto geom = detail::conv_geometry(h, wd, k, k, s, Padding::Same);
            auto x = detail::rand64({n, c, h, wd}, rng);
            auto w = detail::rand64({f, c, k, k}, rng, -0.5, 0.5);
            auto b = detail::rand64({f}, rng);
            Tensor64 target = Tensor64::zeros({n, f, geom.out_h, geom.out_w});
            merge(check_gradients(
                "conv2d_same_strided",
                [target, s](std::vector<Tensor64>& in) {
                    return mse(conv2d(in[0], in[1], in[2], s, Padding::Same), target);
                },
                {x, w, b}));
        }
        {
            int n = dim(1, 2), c = dim(1, 3), h = 2 * dim(1, 3), wd = 2 * dim(1, 3);
            auto x = detail::rand64_separated({n, c, h, wd}, rng);
            Tensor64 target = Tensor64::zeros({n, c, h / 2, wd / 2});
            merge(check_gradients(
                "maxpool2d",
                [target](std::vector<Tensor64>& in) { return mse(maxpool2d(in[0]), target); },
                {x}));
        }
        {
            int n = dim(2, 4), c = dim(1, 3), h = dim(1, 3), wd = dim(1, 3);
            auto x = detail::rand64({n, c, h, wd}, rng);
            auto gamma = detail::rand64({c}, rng, 0.5, 1.5);
            auto beta = detail::rand64({c}, rng);
            Tensor64 target = Tensor64::zeros({n, c, h, wd});
            merge(check_gradients(
                "batchnorm_train",
                [target](std::vector<Tensor64>& in) {
                    BatchNormState<double> state;
                    return mse(batchnorm(in[0], in[1], in[2], state, true), target);
                },
                {x, gamma, beta}));
        }
        {
            // the full SE recalibration path: GAP -> reduce -> relu ->
            // expand -> sigmoid -> channel scale
            int n = dim(1, 2), c = dim(2, 5), mid = dim(1, 2), h = dim(2, 3), wd = dim(2, 3);
            auto x = detail::rand64({n, c, h, wd}, rng);
            auto wr = detail::rand64_off_kink({c, mid}, rng);
            auto br = detail::rand64_off_kink({mid}, rng);
            auto we = detail::rand64({mid, c}, rng);
            auto be = detail::rand64({c}, rng);
            Tensor64 target = Tensor64::zeros({n, c, h, wd});
            merge(check_gradients(
                "se_block",
                [target](std::vector<Tensor64>& in) {
                    auto s = global_avg_pool(in[0]);
                    s = relu(add_rowvec(matmul(s, in[1]), in[2]));
                    s = sigmoid(add_rowvec(matmul(s, in[3]), in[4]));
                    return mse(scale_channels(in[0], s), target);
                },
                {x, wr, br, we, be}));
        }
        {
            auto x = detail::rand64_off_kink({dim(1, 4), dim(1, 8)}, rng);
            Tensor64 target = Tensor64::zeros(x.shape());
            merge(check_gradients(
                "leaky_relu",
                [target](std::vector<Tensor64>& in) { return mse(leaky_relu(in[0]), target); },
                {x}));
        }
        {
            auto x = detail::rand64({dim(1, 3), dim(1, 6)}, rng, -2.0, 2.0);
            Tensor64 t = detail::rand64(x.shape(), rng, 0.0, 1.0);
            merge(check_gradients(
                "sigmoid_bce",
                [t](std::vector<Tensor64>& in) { return binary_cross_entropy(sigmoid(in[0]), t); },
                {x}));
        }
        {
            // composite detector loss over a tiny random grid
            int a = dim(1, 2), c = dim(1, 2), gh = dim(2, 3), gw = dim(2, 3);
            auto pred = detail::rand64({1, a * (5 + c), gh, gw}, rng, -2.0, 2.0);
            Tensor64 target = detail::rand64({1, a * (5 + c), gh, gw}, rng, 0.0, 1.0);
            Tensor64 obj_mask = Tensor64::zeros({1, a, gh, gw});
            Tensor64 box_mask = Tensor64::zeros({1, a, gh, gw});
            std::bernoulli_distribution coin(0.5);
            for (std::int64_t i = 0; i < obj_mask.size(); ++i) {
                obj_mask.data()[i] = coin(rng) ? 1.0 : 0.0;
                box_mask.data()[i] = coin(rng) ? 1.0 : 0.0;
            }
            merge(check_gradients(
                "detection_loss",
                [target, obj_mask, box_mask, c](std::vector<Tensor64>& in) {
                    return detection_loss_t<double>(in[0], target, obj_mask, box_mask, c, 1.0, 1.0,
                                                    1.0);
                },
                {pred}));
        }
        {
            auto x = detail::rand64({dim(2, 4), dim(2, 8)}, rng);
            Tensor64 target = Tensor64::zeros(x.shape());
            std::uint64_t drop_seed = seed + static_cast<std::uint64_t>(rep) + 17;
            merge(check_gradients(
                "dropout_train",
                [target, drop_seed](std::vector<Tensor64>& in) {
                    // fresh identically-seeded RNG per evaluation keeps the
                    // mask fixed across finite-difference probes
                    std::mt19937_64 r(drop_seed);
                    return mse(dropout(in[0], 0.5, true, &r), target);
                },
                {x}));
        }
    }
    return reports;
}

}  // namespace finnet

#endif
