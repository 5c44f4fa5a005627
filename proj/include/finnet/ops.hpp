#ifndef FINNET_OPS_HPP
#define FINNET_OPS_HPP

#include <algorithm>
#include <cmath>
#include <random>

#include "finnet/tensor.hpp"

extern "C" {
#include <cblas.h>
}

namespace finnet {

enum class Padding { Valid, Same };

namespace detail {

inline void gemm_rm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                    const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm_rm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
bool on_tape(const TensorT<T>& t) {
    return t.node()->requires_grad;
}

template <typename T, typename F>
TensorT<T> make_result(Shape shape, std::vector<T> value, std::vector<TensorT<T>> parents, F&& fn) {
    TensorT<T> out = TensorT<T>::from(std::move(shape), std::move(value));
    bool tape = false;
    for (auto& p : parents) tape = tape || on_tape(p);
    if (tape) {
        out.set_requires_grad(true);
        for (auto& p : parents) out.node()->parents.push_back(p.node());
        out.node()->backward = std::forward<F>(fn);
    }
    return out;
}

struct ConvGeom {
    int out_h, out_w, pad_h, pad_w;  // pad at top/left; extra odd pixel goes bottom/right
};

inline ConvGeom conv_geometry(int in_h, int in_w, int kh, int kw, int stride, Padding pad) {
    ConvGeom g{};
    if (pad == Padding::Valid) {
        FN_CHECK(in_h >= kh && in_w >= kw,
                 "kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit input " + std::to_string(in_h) + "x" + std::to_string(in_w));
        g.pad_h = g.pad_w = 0;
        g.out_h = (in_h - kh) / stride + 1;
        g.out_w = (in_w - kw) / stride + 1;
    } else {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        int tot_h = std::max(0, (g.out_h - 1) * stride + kh - in_h);
        int tot_w = std::max(0, (g.out_w - 1) * stride + kw - in_w);
        g.pad_h = tot_h / 2;
        g.pad_w = tot_w / 2;
    }
    return g;
}

template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int ph, int pw, int oh,
            int ow, T* col) {
    // col is (c*kh*kw) x (oh*ow)
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                T* dst = col + ((ch * kh + i) * kw + j) * (oh * ow);
                const T* src = x + ch * h * w;
                for (int y = 0; y < oh; ++y) {
                    int iy = y * stride - ph + i;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + y * ow, dst + (y + 1) * ow, T(0));
                        continue;
                    }
                    for (int xo = 0; xo < ow; ++xo) {
                        int ix = xo * stride - pw + j;
                        dst[y * ow + xo] = (ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, int c, int h, int w, int kh, int kw, int stride, int ph, int pw,
                int oh, int ow, T* x) {
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const T* src = col + ((ch * kh + i) * kw + j) * (oh * ow);
                T* dst = x + ch * h * w;
                for (int y = 0; y < oh; ++y) {
                    int iy = y * stride - ph + i;
                    if (iy < 0 || iy >= h) continue;
                    for (int xo = 0; xo < ow; ++xo) {
                        int ix = xo * stride - pw + j;
                        if (ix >= 0 && ix < w) dst[iy * w + ix] += src[y * ow + xo];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / linear algebra

template <typename T>
TensorT<T> add(TensorT<T> a, TensorT<T> b) {
    FN_CHECK(a.shape() == b.shape(),
             "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.values());
    for (std::int64_t i = 0; i < a.size(); ++i) v[i] += b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode<T>& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i];
        }
    });
}

template <typename T>
TensorT<T> mul(TensorT<T> a, TensorT<T> b) {
    FN_CHECK(a.shape() == b.shape(),
             "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.values());
    for (std::int64_t i = 0; i < a.size(); ++i) v[i] *= b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode<T>& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i] * an->value[i];
        }
    });
}

template <typename T>
TensorT<T> smul(TensorT<T> a, T c) {
    std::vector<T> v(a.values());
    for (auto& x : v) x *= c;
    auto an = a.node();
    return detail::make_result<T>(a.shape(), std::move(v), {a}, [an, c](TensorNode<T>& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * c;
    });
}

/// y = a @ b for a {M,K}, b {K,N}.
template <typename T>
TensorT<T> matmul(TensorT<T> a, TensorT<T> b) {
    FN_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
             "matmul: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> v(static_cast<size_t>(m) * n);
    detail::gemm_rm(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), v.data(), n);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>({m, n}, std::move(v), {a, b},
                                  [an, bn, m, n, k](TensorNode<T>& out) {
                                      if (an->requires_grad) {
                                          an->ensure_grad();
                                          detail::gemm_rm(false, true, m, k, n, T(1), out.grad.data(), n,
                                                          bn->value.data(), n, T(1), an->grad.data(), k);
                                      }
                                      if (bn->requires_grad) {
                                          bn->ensure_grad();
                                          detail::gemm_rm(true, false, k, n, m, T(1), an->value.data(), k,
                                                          out.grad.data(), n, T(1), bn->grad.data(), n);
                                      }
                                  });
}

/// x {N,U} + bias {U} broadcast over rows.
template <typename T>
TensorT<T> add_rowvec(TensorT<T> x, TensorT<T> b) {
    FN_CHECK(x.ndim() == 2 && b.ndim() == 1 && x.dim(1) == b.dim(0),
             "add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    int n = x.dim(0), u = x.dim(1);
    std::vector<T> v(x.values());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < u; ++j) v[static_cast<size_t>(i) * u + j] += b.data()[j];
    auto xn = x.node();
    auto bn = b.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x, b}, [xn, bn, n, u](TensorNode<T>& out) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) xn->grad[i] += out.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < u; ++j) bn->grad[j] += out.grad[static_cast<size_t>(i) * u + j];
        }
    });
}

/// x {N,C,H,W} scaled channel-wise by s {N,C}; the SE recalibration multiply.
template <typename T>
TensorT<T> scale_channels(TensorT<T> x, TensorT<T> s) {
    FN_CHECK(x.ndim() == 4 && s.ndim() == 2 && x.dim(0) == s.dim(0) && x.dim(1) == s.dim(1),
             "scale_channels: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(s.shape()));
    int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> v(x.values());
    for (int i = 0; i < n * c; ++i) {
        T sc = s.data()[i];
        T* p = v.data() + static_cast<size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) p[j] *= sc;
    }
    auto xn = x.node();
    auto sn = s.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x, s},
                                  [xn, sn, n, c, hw](TensorNode<T>& out) {
                                      if (xn->requires_grad) {
                                          xn->ensure_grad();
                                          for (int i = 0; i < n * c; ++i) {
                                              T sc = sn->value[static_cast<size_t>(i)];
                                              for (int j = 0; j < hw; ++j)
                                                  xn->grad[static_cast<size_t>(i) * hw + j] +=
                                                      out.grad[static_cast<size_t>(i) * hw + j] * sc;
                                          }
                                      }
                                      if (sn->requires_grad) {
                                          sn->ensure_grad();
                                          for (int i = 0; i < n * c; ++i) {
                                              T acc = 0;
                                              for (int j = 0; j < hw; ++j)
                                                  acc += out.grad[static_cast<size_t>(i) * hw + j] *
                                                         xn->value[static_cast<size_t>(i) * hw + j];
                                              sn->grad[static_cast<size_t>(i)] += acc;
                                          }
                                      }
                                  });
}

template <typename T>
TensorT<T> reshape(TensorT<T> x, Shape new_shape) {
    FN_CHECK(numel(new_shape) == x.size(), "reshape: cannot view " + shape_str(x.shape()) + " as " +
                                               shape_str(new_shape));
    std::vector<T> v(x.values());
    auto xn = x.node();
    return detail::make_result<T>(std::move(new_shape), std::move(v), {x}, [xn](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) xn->grad[i] += out.grad[i];
    });
}

template <typename T>
TensorT<T> flatten(TensorT<T> x) {
    int n = x.dim(0);
    return reshape(x, {n, static_cast<int>(x.size() / n)});
}

template <typename T>
TensorT<T> sum(TensorT<T> x) {
    T acc = 0;
    for (T v : x.values()) acc += v;
    auto xn = x.node();
    return detail::make_result<T>({1}, {acc}, {x}, [xn](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (auto& g : xn->grad) g += out.grad[0];
    });
}

// ---------------------------------------------------------------------------
// convolution / pooling

/// 2-d cross-correlation, NCHW input, FCkk weights, per-filter bias.
template <typename T>
TensorT<T> conv2d(TensorT<T> x, TensorT<T> w, TensorT<T> b, int stride = 1,
                  Padding pad = Padding::Valid) {
    FN_CHECK(x.ndim() == 4 && w.ndim() == 4, "conv2d expects NCHW input and FCkk weights");
    FN_CHECK(x.dim(1) == w.dim(1), "conv2d: input channels " + shape_str(x.shape()) +
                                       " do not match weights " + shape_str(w.shape()));
    FN_CHECK(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d: bias must have one value per filter");
    FN_CHECK(stride >= 1, "conv2d: stride must be positive");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    auto g = detail::conv_geometry(h, wd, kh, kw, stride, pad);
    int ohw = g.out_h * g.out_w, ckk = c * kh * kw;
    std::vector<T> col(static_cast<size_t>(ckk) * ohw);
    std::vector<T> y(static_cast<size_t>(n) * f * ohw);
    for (int i = 0; i < n; ++i) {
        detail::im2col(x.data() + static_cast<size_t>(i) * c * h * wd, c, h, wd, kh, kw, stride,
                       g.pad_h, g.pad_w, g.out_h, g.out_w, col.data());
        detail::gemm_rm(false, false, f, ohw, ckk, T(1), w.data(), ckk, col.data(), ohw, T(0),
                        y.data() + static_cast<size_t>(i) * f * ohw, ohw);
        for (int fi = 0; fi < f; ++fi) {
            T bias = b.data()[fi];
            T* p = y.data() + (static_cast<size_t>(i) * f + fi) * ohw;
            for (int j = 0; j < ohw; ++j) p[j] += bias;
        }
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_result<T>(
        {n, f, g.out_h, g.out_w}, std::move(y), {x, w, b},
        [=](TensorNode<T>& out) {
            std::vector<T> col2(static_cast<size_t>(ckk) * ohw);
            std::vector<T> dcol(static_cast<size_t>(ckk) * ohw);
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* dy = out.grad.data() + static_cast<size_t>(i) * f * ohw;
                if (wn->requires_grad || xn->requires_grad) {
                    if (wn->requires_grad) {
                        // im2col is recomputed rather than cached across the batch
                        detail::im2col(xn->value.data() + static_cast<size_t>(i) * c * h * wd, c, h,
                                       wd, kh, kw, stride, g.pad_h, g.pad_w, g.out_h, g.out_w,
                                       col2.data());
                        detail::gemm_rm(false, true, f, ckk, ohw, T(1), dy, ohw, col2.data(), ohw,
                                        T(1), wn->grad.data(), ckk);
                    }
                    if (xn->requires_grad) {
                        detail::gemm_rm(true, false, ckk, ohw, f, T(1), wn->value.data(), ckk, dy,
                                        ohw, T(0), dcol.data(), ohw);
                        detail::col2im_acc(dcol.data(), c, h, wd, kh, kw, stride, g.pad_h, g.pad_w,
                                           g.out_h, g.out_w,
                                           xn->grad.data() + static_cast<size_t>(i) * c * h * wd);
                    }
                }
                if (bn->requires_grad) {
                    for (int fi = 0; fi < f; ++fi) {
                        T acc = 0;
                        for (int j = 0; j < ohw; ++j) acc += dy[static_cast<size_t>(fi) * ohw + j];
                        bn->grad[fi] += acc;
                    }
                }
            }
        });
}

template <typename T>
TensorT<T> maxpool2d(TensorT<T> x, int window = 2, int stride = 2) {
    FN_CHECK(x.ndim() == 4, "maxpool2d expects NCHW input");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    FN_CHECK(h >= window && w >= window, "maxpool2d: window " + std::to_string(window) +
                                             " larger than input " + shape_str(x.shape()));
    int oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    std::vector<T> y(static_cast<size_t>(n) * c * oh * ow);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
    const T* xd = x.data();
    for (int i = 0; i < n * c; ++i) {
        const T* plane = xd + static_cast<size_t>(i) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                std::int64_t best = (oy * stride) * w + ox * stride;
                T bv = plane[best];
                for (int dy = 0; dy < window; ++dy)
                    for (int dx = 0; dx < window; ++dx) {
                        std::int64_t idx = (oy * stride + dy) * w + ox * stride + dx;
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                size_t o = (static_cast<size_t>(i) * oh + oy) * ow + ox;
                y[o] = bv;
                (*argmax)[o] = static_cast<std::int64_t>(i) * h * w + best;
            }
        }
    }
    auto xn = x.node();
    return detail::make_result<T>({n, c, oh, ow}, std::move(y), {x}, [xn, argmax](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) xn->grad[(*argmax)[i]] += out.grad[i];
    });
}

template <typename T>
TensorT<T> global_avg_pool(TensorT<T> x) {
    FN_CHECK(x.ndim() == 4, "global_avg_pool expects NCHW input");
    int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> y(static_cast<size_t>(n) * c);
    for (int i = 0; i < n * c; ++i) {
        T acc = 0;
        const T* p = x.data() + static_cast<size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) acc += p[j];
        y[static_cast<size_t>(i)] = acc / static_cast<T>(hw);
    }
    auto xn = x.node();
    return detail::make_result<T>({n, c}, std::move(y), {x}, [xn, n, c, hw](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < n * c; ++i) {
            T g = out.grad[static_cast<size_t>(i)] / static_cast<T>(hw);
            for (int j = 0; j < hw; ++j) xn->grad[static_cast<size_t>(i) * hw + j] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// batch normalization

template <typename T>
struct BatchNormState {
    std::vector<T> running_mean, running_var;
    bool initialized = false;
};

/// Channel-wise batch norm over dim 1; works for NCHW and NC inputs.
/// Train mode uses batch statistics and updates the running EMA; infer
/// mode requires initialized running statistics.
template <typename T>
TensorT<T> batchnorm(TensorT<T> x, TensorT<T> gamma, TensorT<T> beta, BatchNormState<T>& state,
                     bool train, T momentum = T(0.99), T eps = T(1e-5)) {
    FN_CHECK(x.ndim() >= 2, "batchnorm expects at least 2-d input");
    int n = x.dim(0), c = x.dim(1);
    int sp = static_cast<int>(x.size() / (static_cast<std::int64_t>(n) * c));
    FN_CHECK(gamma.ndim() == 1 && gamma.dim(0) == c && beta.ndim() == 1 && beta.dim(0) == c,
             "batchnorm: gamma/beta must be per-channel vectors of length " + std::to_string(c));
    int m = n * sp;  // population per channel
    std::vector<T> mean(c), var(c);
    if (train) {
        FN_CHECK(m >= 2, "batchnorm train mode needs a per-channel population of at least 2");
        for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (int i = 0; i < n; ++i) {
                const T* p = x.data() + (static_cast<size_t>(i) * c + ch) * sp;
                for (int j = 0; j < sp; ++j) acc += p[j];
            }
            mean[ch] = acc / static_cast<T>(m);
            T vacc = 0;
            for (int i = 0; i < n; ++i) {
                const T* p = x.data() + (static_cast<size_t>(i) * c + ch) * sp;
                for (int j = 0; j < sp; ++j) {
                    T d = p[j] - mean[ch];
                    vacc += d * d;
                }
            }
            var[ch] = vacc / static_cast<T>(m);
        }
        if (!state.initialized) {
            state.running_mean = mean;
            state.running_var = var;
            state.initialized = true;
        } else {
            for (int ch = 0; ch < c; ++ch) {
                state.running_mean[ch] = momentum * state.running_mean[ch] + (1 - momentum) * mean[ch];
                state.running_var[ch] = momentum * state.running_var[ch] + (1 - momentum) * var[ch];
            }
        }
    } else {
        if (!state.initialized)
            throw Error("batchnorm: inference requested before running statistics were initialized");
        mean = state.running_mean;
        var = state.running_var;
    }
    std::vector<T> invstd(c);
    for (int ch = 0; ch < c; ++ch) invstd[ch] = T(1) / std::sqrt(var[ch] + eps);
    auto xhat = std::make_shared<std::vector<T>>(x.values().size());
    std::vector<T> y(x.values().size());
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            size_t base = (static_cast<size_t>(i) * c + ch) * sp;
            for (int j = 0; j < sp; ++j) {
                T xh = (x.data()[base + j] - mean[ch]) * invstd[ch];
                (*xhat)[base + j] = xh;
                y[base + j] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto istd = std::make_shared<std::vector<T>>(std::move(invstd));
    return detail::make_result<T>(
        x.shape(), std::move(y), {x, gamma, beta},
        [xn, gn, bn, xhat, istd, n, c, sp, m, train](TensorNode<T>& out) {
            std::vector<T> dgamma(c, T(0)), dbeta(c, T(0));
            for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    size_t base = (static_cast<size_t>(i) * c + ch) * sp;
                    for (int j = 0; j < sp; ++j) {
                        dgamma[ch] += out.grad[base + j] * (*xhat)[base + j];
                        dbeta[ch] += out.grad[base + j];
                    }
                }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int ch = 0; ch < c; ++ch) gn->grad[ch] += dgamma[ch];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int ch = 0; ch < c; ++ch) bn->grad[ch] += dbeta[ch];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch) {
                        size_t base = (static_cast<size_t>(i) * c + ch) * sp;
                        T k = gn->value[ch] * (*istd)[ch];
                        if (train) {
                            for (int j = 0; j < sp; ++j)
                                xn->grad[base + j] +=
                                    k / static_cast<T>(m) *
                                    (static_cast<T>(m) * out.grad[base + j] - dbeta[ch] -
                                     (*xhat)[base + j] * dgamma[ch]);
                        } else {
                            // running stats are constants in infer mode
                            for (int j = 0; j < sp; ++j) xn->grad[base + j] += k * out.grad[base + j];
                        }
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
TensorT<T> relu(TensorT<T> x) {
    std::vector<T> v(x.values());
    for (auto& e : v) e = e > T(0) ? e : T(0);
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x}, [xn](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
            if (xn->value[i] > T(0)) xn->grad[i] += out.grad[i];
    });
}

template <typename T>
TensorT<T> leaky_relu(TensorT<T> x, T slope = T(0.1)) {
    std::vector<T> v(x.values());
    for (auto& e : v) e = e > T(0) ? e : slope * e;
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x}, [xn, slope](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
            xn->grad[i] += out.grad[i] * (xn->value[i] > T(0) ? T(1) : slope);
    });
}

template <typename T>
TensorT<T> sigmoid(TensorT<T> x) {
    std::vector<T> v(x.values());
    for (auto& e : v) e = T(1) / (T(1) + std::exp(-e));
    auto yv = std::make_shared<std::vector<T>>(v);
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x}, [xn, yv](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
            xn->grad[i] += out.grad[i] * (*yv)[i] * (T(1) - (*yv)[i]);
    });
}

/// Numerically-stable softmax over the last axis.
template <typename T>
TensorT<T> softmax(TensorT<T> x) {
    FN_CHECK(x.ndim() >= 1, "softmax expects a non-empty tensor");
    int last = x.dim(x.ndim() - 1);
    int rows = static_cast<int>(x.size() / last);
    std::vector<T> v(x.values());
    for (int r = 0; r < rows; ++r) {
        T* p = v.data() + static_cast<size_t>(r) * last;
        T mx = p[0];
        for (int j = 1; j < last; ++j) mx = std::max(mx, p[j]);
        T z = 0;
        for (int j = 0; j < last; ++j) {
            p[j] = std::exp(p[j] - mx);
            z += p[j];
        }
        for (int j = 0; j < last; ++j) p[j] /= z;
    }
    auto yv = std::make_shared<std::vector<T>>(v);
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x},
                                  [xn, yv, rows, last](TensorNode<T>& out) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (int r = 0; r < rows; ++r) {
                                          size_t base = static_cast<size_t>(r) * last;
                                          T dot = 0;
                                          for (int j = 0; j < last; ++j)
                                              dot += out.grad[base + j] * (*yv)[base + j];
                                          for (int j = 0; j < last; ++j)
                                              xn->grad[base + j] +=
                                                  (*yv)[base + j] * (out.grad[base + j] - dot);
                                      }
                                  });
}

/// Inverted dropout; exact identity when train == false.
template <typename T>
TensorT<T> dropout(TensorT<T> x, T p, bool train, std::mt19937_64* rng) {
    FN_CHECK(p >= T(0) && p < T(1), "dropout rate must lie in [0,1)");
    if (!train || p == T(0)) return x;
    FN_CHECK(rng != nullptr, "dropout in train mode needs an RNG");
    T keep = T(1) - p;
    auto mask = std::make_shared<std::vector<T>>(x.values().size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<T> v(x.values());
    for (size_t i = 0; i < v.size(); ++i) {
        (*mask)[i] = (u(*rng) >= static_cast<double>(p)) ? T(1) / keep : T(0);
        v[i] *= (*mask)[i];
    }
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(v), {x}, [xn, mask](TensorNode<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) xn->grad[i] += out.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// losses

namespace detail {
template <typename T>
constexpr T kProbClamp = T(1e-7);
}

/// Per-element -[t log p + (1-t) log(1-p)]; p clamped away from {0,1}.
template <typename T>
TensorT<T> bce_elements(TensorT<T> pred, TensorT<T> target) {
    FN_CHECK(pred.shape() == target.shape(), "bce: shape mismatch " + shape_str(pred.shape()) +
                                                 " vs " + shape_str(target.shape()));
    const T lo = detail::kProbClamp<T>, hi = T(1) - detail::kProbClamp<T>;
    std::vector<T> v(pred.values().size());
    auto mask = std::make_shared<std::vector<bool>>(v.size());  // true where unclamped
    for (size_t i = 0; i < v.size(); ++i) {
        T p = pred.data()[i];
        (*mask)[i] = (p > lo && p < hi);
        p = std::clamp(p, lo, hi);
        T t = target.data()[i];
        v[i] = -(t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
    }
    auto pn = pred.node();
    auto tn = target.node();
    return detail::make_result<T>(pred.shape(), std::move(v), {pred, target},
                                  [pn, tn, mask, lo, hi](TensorNode<T>& out) {
                                      if (!pn->requires_grad) return;
                                      pn->ensure_grad();
                                      for (size_t i = 0; i < out.grad.size(); ++i) {
                                          if (!(*mask)[i]) continue;
                                          T p = pn->value[i], t = tn->value[i];
                                          pn->grad[i] += out.grad[i] * (-t / p + (T(1) - t) / (T(1) - p));
                                      }
                                  });
}

template <typename T>
TensorT<T> squared_error_elements(TensorT<T> pred, TensorT<T> target) {
    FN_CHECK(pred.shape() == target.shape(), "mse: shape mismatch " + shape_str(pred.shape()) +
                                                 " vs " + shape_str(target.shape()));
    std::vector<T> v(pred.values().size());
    for (size_t i = 0; i < v.size(); ++i) {
        T d = pred.data()[i] - target.data()[i];
        v[i] = d * d;
    }
    auto pn = pred.node();
    auto tn = target.node();
    return detail::make_result<T>(pred.shape(), std::move(v), {pred, target},
                                  [pn, tn](TensorNode<T>& out) {
                                      if (!pn->requires_grad) return;
                                      pn->ensure_grad();
                                      for (size_t i = 0; i < out.grad.size(); ++i)
                                          pn->grad[i] += out.grad[i] * T(2) *
                                                         (pn->value[i] - tn->value[i]);
                                  });
}

/// Mean categorical cross-entropy for pred/target rows over the last axis.
template <typename T>
TensorT<T> categorical_cross_entropy(TensorT<T> pred, TensorT<T> target) {
    FN_CHECK(pred.shape() == target.shape(), "cce: shape mismatch " + shape_str(pred.shape()) +
                                                 " vs " + shape_str(target.shape()));
    FN_CHECK(pred.ndim() == 2, "cce expects {rows, classes}");
    int n = pred.dim(0);
    const T lo = detail::kProbClamp<T>, hi = T(1) - detail::kProbClamp<T>;
    T loss = 0;
    auto mask = std::make_shared<std::vector<bool>>(pred.values().size());
    for (size_t i = 0; i < pred.values().size(); ++i) {
        T p = pred.data()[i];
        (*mask)[i] = (p > lo && p < hi);
        loss -= target.data()[i] * std::log(std::clamp(p, lo, hi));
    }
    loss /= static_cast<T>(n);
    auto pn = pred.node();
    auto tn = target.node();
    auto out = detail::make_result<T>({1}, {loss}, {pred, target},
                                      [pn, tn, mask, lo, hi, n](TensorNode<T>& o) {
                                          if (!pn->requires_grad) return;
                                          pn->ensure_grad();
                                          for (size_t i = 0; i < pn->value.size(); ++i) {
                                              if (!(*mask)[i]) continue;
                                              pn->grad[i] += o.grad[0] * (-tn->value[i] / pn->value[i]) /
                                                             static_cast<T>(n);
                                          }
                                      });
    check_finite(out, "categorical_cross_entropy");
    return out;
}

template <typename T>
TensorT<T> binary_cross_entropy(TensorT<T> pred, TensorT<T> target) {
    auto e = bce_elements(pred, target);
    auto out = smul(sum(e), T(1) / static_cast<T>(e.size()));
    check_finite(out, "binary_cross_entropy");
    return out;
}

template <typename T>
TensorT<T> mse(TensorT<T> pred, TensorT<T> target) {
    auto e = squared_error_elements(pred, target);
    auto out = smul(sum(e), T(1) / static_cast<T>(e.size()));
    check_finite(out, "mse");
    return out;
}

}  // namespace finnet

#endif
