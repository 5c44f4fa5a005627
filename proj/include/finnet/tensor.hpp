#ifndef FINNET_TENSOR_HPP
#define FINNET_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace finnet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void check_fail(const char* expr, const std::string& msg) {
    std::ostringstream os;
    os << "contract violation: " << msg << " (" << expr << ")";
    throw Error(os.str());
}
}  // namespace detail

#define FN_CHECK(cond, msg)                               \
    do {                                                  \
        if (!(cond)) ::finnet::detail::check_fail(#cond, (msg)); \
    } while (0)

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

/// Dense N-d array with an optional reverse-mode autodiff tape.
/// Copies are shallow (shared storage), matching the usual graph-node
/// semantics of define-by-run frameworks.
template <typename T>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }
    static TensorT filled(Shape shape, T v, bool requires_grad = false) {
        TensorT t;
        t.n_ = std::make_shared<TensorNode<T>>();
        t.n_->shape = std::move(shape);
        for (int e : t.n_->shape) FN_CHECK(e > 0, "tensor extents must be positive");
        t.n_->value.assign(static_cast<size_t>(numel(t.n_->shape)), v);
        t.n_->requires_grad = requires_grad;
        return t;
    }
    static TensorT from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        TensorT t;
        t.n_ = std::make_shared<TensorNode<T>>();
        FN_CHECK(static_cast<std::int64_t>(data.size()) == numel(shape),
                 "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }
    static TensorT scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool valid() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }

    T* data() { return n_->value.data(); }
    const T* data() const { return n_->value.data(); }
    std::vector<T>& values() { return n_->value; }
    const std::vector<T>& values() const { return n_->value; }

    bool requires_grad() const { return n_->requires_grad; }
    TensorT& set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        return *this;
    }
    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() { n_->grad.clear(); }

    T item() const {
        FN_CHECK(size() == 1, "item() requires a scalar tensor, got " + shape_str(shape()));
        return n_->value[0];
    }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

    /// Deep copy of values only; the copy is a detached leaf.
    TensorT clone() const {
        return from(n_->shape, n_->value, n_->requires_grad);
    }

  private:
    std::shared_ptr<TensorNode<T>> n_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
inline bool all_finite(const TensorT<T>& t) {
    for (T v : t.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
inline void check_finite(const TensorT<T>& t, const std::string& where) {
    if (!all_finite(t)) throw Error("non-finite value produced in " + where);
}

/// Reverse-mode sweep from a scalar loss. The tape is consumed: backward
/// closures are dropped afterwards so a second call is a no-op graph-wise.
template <typename T>
inline void backward(TensorT<T> loss) {
    FN_CHECK(loss.size() == 1, "backward() requires a scalar loss, got " + shape_str(loss.shape()));
    using NodeP = std::shared_ptr<TensorNode<T>>;
    std::vector<NodeP> order;
    {
        // iterative post-order DFS
        std::vector<std::pair<NodeP, size_t>> st;
        std::unordered_set<const TensorNode<T>*> mark;
        st.emplace_back(loss.node(), 0);
        mark.insert(loss.node().get());
        while (!st.empty()) {
            auto& [node, idx] = st.back();
            if (idx < node->parents.size()) {
                auto child = node->parents[idx++];
                if (mark.insert(child.get()).second) st.emplace_back(child, 0);
            } else {
                order.push_back(node);
                st.pop_back();
            }
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& node = *it;
        if (node->backward) {
            node->ensure_grad();
            node->backward(*node);
            node->backward = nullptr;  // consume the tape
        }
    }
}

}  // namespace finnet

#endif
