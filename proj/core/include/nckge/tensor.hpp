#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace nckge {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class S>
struct TensorData {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated lazily, same length as value when present
    bool requires_grad = false;
};

/// Dense n-dimensional array. Copies share storage (shared_ptr semantics);
/// the tape keeps nodes alive through these handles.
template <class S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<TensorData<S>>()) {
        for (int64_t e : shape)
            if (e <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->value.assign(static_cast<size_t>(numel_of(d_->shape)), S(0));
        d_->requires_grad = requires_grad;
    }

    static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (static_cast<int64_t>(values.size()) != t.numel())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(t.shape()));
        t.d_->value = std::move(values);
        return t;
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (S& e : t.d_->value) e = v;
        return t;
    }

    static Tensor scalar_tensor(S v, bool requires_grad = false) {
        return from(Shape{}, {v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }

    S* data() { return d_->value.data(); }
    const S* data() const { return d_->value.data(); }
    std::vector<S>& values() { return d_->value; }
    const std::vector<S>& values() const { return d_->value; }

    S scalar() const {
        if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
        return d_->value[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return !d_->grad.empty(); }

    /// Gradient buffer, allocated zeroed on first touch. Only valid for
    /// tensors with requires_grad set. Const because handles share storage;
    /// backward closures hold const copies.
    S* grad() const {
        if (!d_->requires_grad)
            throw NumericError("grad() on a tensor that does not require grad");
        if (d_->grad.empty()) d_->grad.assign(d_->value.size(), S(0));
        return d_->grad.data();
    }

    const std::vector<S>& grad_vec() const { return d_->grad; }

    void zero_grad() {
        if (!d_->grad.empty()) d_->grad.assign(d_->value.size(), S(0));
    }

    void drop_grad() { d_->grad.clear(); }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    std::shared_ptr<TensorData<S>> d_;
};

enum class Mode { train, eval };

inline bool checked_mode_env() {
    const char* v = std::getenv("NCKGE_CHECKED");
    return v != nullptr && v[0] == '1';
}

/// Append-only op tape. One graph per worker; backward walks the tape in
/// exact reverse order and may be called once per graph.
template <class S>
class Graph {
public:
    explicit Graph(Mode mode = Mode::train)
        : training_(mode == Mode::train),
          grad_enabled_(mode == Mode::train),
          checked_(checked_mode_env()) {}

    bool training() const { return training_; }
    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

    bool checked() const { return checked_; }
    void set_checked(bool on) { checked_ = on; }

    int workers() const { return workers_; }
    void set_workers(int n) { workers_ = n < 1 ? 1 : n; }

    size_t size() const { return tape_.size(); }

    template <class... Ins>
    bool wants_grad(const Ins&... ins) const {
        return grad_enabled_ && (ins.requires_grad() || ...);
    }

    void record(Tensor<S> out, std::function<void()> backward_fn) {
        tape_.push_back(Node{std::move(out), std::move(backward_fn)});
    }

    void check_finite(const char* op, const Tensor<S>& t) const {
        if (!checked_) return;
        for (S v : t.values())
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }

    void backward(Tensor<S> loss) {
        if (backward_done_)
            throw NumericError("backward() called twice on one graph; reset() first");
        if (loss.numel() != 1)
            throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw NumericError("backward() on a loss that does not require grad");
        backward_done_ = true;
        loss.grad()[0] = S(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            if (!it->out.requires_grad() || !it->out.has_grad()) continue;
            it->fn();
        }
    }

    void reset() {
        tape_.clear();
        backward_done_ = false;
    }

private:
    struct Node {
        Tensor<S> out;
        std::function<void()> fn;
    };

    std::vector<Node> tape_;
    bool training_;
    bool grad_enabled_;
    bool checked_;
    bool backward_done_ = false;
    int workers_ = 1;
};

/// Static row partition; deterministic for any worker count because each
/// output element is produced by exactly one thread in a fixed order.
inline void parallel_for(int workers, int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (workers <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    int t = static_cast<int>(workers < n ? workers : n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(t));
    int64_t chunk = (n + t - 1) / t;
    for (int i = 0; i < t; ++i) {
        int64_t b = i * chunk;
        int64_t e = b + chunk < n ? b + chunk : n;
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace nckge
