#ifndef FINNET_DETECTOR_LOSS_HPP
#define FINNET_DETECTOR_LOSS_HPP

#include "finnet/ops.hpp"

namespace finnet {

/// Composite detector loss over a raw prediction grid {N, A*(5+C), H, W}:
/// BCE on sigmoid(objectness) wherever obj_mask is 1, MSE on the four box
/// offsets and BCE on sigmoid(class logits) wherever box_mask is 1.
/// Result is the per-image mean. Targets store tx,ty in logit space and
/// tw,th in log space; tensors obj_mask/box_mask are {N, A, H, W}.
template <typename T>
TensorT<T> detection_loss_t(TensorT<T> pred, const TensorT<T>& target, const TensorT<T>& obj_mask,
                            const TensorT<T>& box_mask, int class_count, T w_obj, T w_box,
                            T w_cls) {
    FN_CHECK(pred.ndim() == 4, "detection loss expects a 4-d prediction grid");
    FN_CHECK(pred.shape() == target.shape(), "detection loss: prediction " + shape_str(pred.shape()) +
                                                 " vs target " + shape_str(target.shape()));
    int n = pred.dim(0), ch = pred.dim(1), gh = pred.dim(2), gw = pred.dim(3);
    int fields = 5 + class_count;
    FN_CHECK(ch % fields == 0, "detection loss: channel extent " + std::to_string(ch) +
                                   " is not a multiple of 5+C=" + std::to_string(fields));
    int a = ch / fields;
    FN_CHECK(obj_mask.shape() == Shape({n, a, gh, gw}) && box_mask.shape() == Shape({n, a, gh, gw}),
             "detection loss: mask shapes must be {N,A,H,W}");
    const T lo = detail::kProbClamp<T>, hi = T(1) - detail::kProbClamp<T>;
    const int cells = gh * gw;
    auto at = [&](const T* base, int ni, int ai, int f, int cell) {
        return base[((static_cast<size_t>(ni) * a + ai) * fields + f) * cells + cell];
    };
    T loss = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ai = 0; ai < a; ++ai) {
            for (int cell = 0; cell < cells; ++cell) {
                size_t mi = (static_cast<size_t>(ni) * a + ai) * cells + cell;
                if (obj_mask.data()[mi] != T(0)) {
                    T p = std::clamp(T(1) / (T(1) + std::exp(-at(pred.data(), ni, ai, 4, cell))), lo, hi);
                    T t = at(target.data(), ni, ai, 4, cell);
                    loss -= w_obj * (t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
                }
                if (box_mask.data()[mi] != T(0)) {
                    for (int f = 0; f < 4; ++f) {
                        T d = at(pred.data(), ni, ai, f, cell) - at(target.data(), ni, ai, f, cell);
                        loss += w_box * d * d;
                    }
                    for (int c = 0; c < class_count; ++c) {
                        T p = std::clamp(
                            T(1) / (T(1) + std::exp(-at(pred.data(), ni, ai, 5 + c, cell))), lo, hi);
                        T t = at(target.data(), ni, ai, 5 + c, cell);
                        loss -= w_cls * (t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
                    }
                }
            }
        }
    }
    loss /= static_cast<T>(n);
    auto pn = pred.node();
    auto tn = target.node();
    auto on = obj_mask.node();
    auto bn = box_mask.node();
    auto out = detail::make_result<T>(
        {1}, {loss}, {pred, target, obj_mask, box_mask},
        [pn, tn, on, bn, n, a, fields, cells, class_count, w_obj, w_box, w_cls, lo,
         hi](TensorNode<T>& o) {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            T scale = o.grad[0] / static_cast<T>(n);
            auto idx = [&](int ni, int ai, int f, int cell) {
                return ((static_cast<size_t>(ni) * a + ai) * fields + f) * cells + cell;
            };
            for (int ni = 0; ni < n; ++ni)
                for (int ai = 0; ai < a; ++ai)
                    for (int cell = 0; cell < cells; ++cell) {
                        size_t mi = (static_cast<size_t>(ni) * a + ai) * cells + cell;
                        if (on->value[mi] != T(0)) {
                            size_t k = idx(ni, ai, 4, cell);
                            T s = T(1) / (T(1) + std::exp(-pn->value[k]));
                            if (s > lo && s < hi)
                                pn->grad[k] += scale * w_obj * (s - tn->value[k]);
                        }
                        if (bn->value[mi] != T(0)) {
                            for (int f = 0; f < 4; ++f) {
                                size_t k = idx(ni, ai, f, cell);
                                T d = pn->value[k] - tn->value[k];
                                pn->grad[k] += scale * w_box * T(2) * d;
                            }
                            for (int c = 0; c < class_count; ++c) {
                                size_t k = idx(ni, ai, 5 + c, cell);
                                T s = T(1) / (T(1) + std::exp(-pn->value[k]));
                                if (s > lo && s < hi)
                                    pn->grad[k] += scale * w_cls * (s - tn->value[k]);
                            }
                        }
                    }
        });
    check_finite(out, "detection_loss");
    return out;
}

}  // namespace finnet

#endif
