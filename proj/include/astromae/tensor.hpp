#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "astromae/error.hpp"

namespace astromae {

inline std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
struct Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// Dense row-major tensor. `data` is written once by the op that produces the
// tensor and treated as immutable afterwards; `grad` accumulates across
// backward calls until cleared. `adj` is scratch owned by the reverse pass.
template <typename T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    std::vector<T> adj;
    std::uint64_t adj_epoch = 0;

    Tensor() = default;
    Tensor(std::vector<std::int64_t> s, std::vector<T> d, bool rg)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape[i]; }
    std::size_t rank() const { return shape.size(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    static TensorPtr<T> zeros(std::vector<std::int64_t> shape, bool rg = false) {
        auto n = shape_numel(shape);
        return std::make_shared<Tensor<T>>(std::move(shape), std::vector<T>(n, T(0)), rg);
    }
    static TensorPtr<T> full(std::vector<std::int64_t> shape, T value, bool rg = false) {
        auto n = shape_numel(shape);
        return std::make_shared<Tensor<T>>(std::move(shape), std::vector<T>(n, value), rg);
    }
    static TensorPtr<T> from(std::vector<std::int64_t> shape, std::vector<T> data, bool rg = false) {
        return std::make_shared<Tensor<T>>(std::move(shape), std::move(data), rg);
    }
    static TensorPtr<T> scalar(T value, bool rg = false) {
        return from({}, {value}, rg);
    }
};

// Ordered record of applied operations. Ops append themselves while a tape is
// active on the current thread; backward() replays the records in reverse,
// propagating adjoints and then folding them into .grad so that repeated
// backward calls accumulate exactly.
template <typename T>
class Tape {
public:
    struct Node {
        TensorPtr<T> out;
        std::vector<TensorPtr<T>> ins;  // inputs that require grad
        std::function<void()> pull;     // reads out->adj, adds into ins' adj
    };

    void record(TensorPtr<T> out, std::vector<TensorPtr<T>> ins, std::function<void()> pull) {
        nodes_.push_back(Node{std::move(out), std::move(ins), std::move(pull)});
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(const TensorPtr<T>& loss) {
        if (loss->numel() != 1) {
            throw RankError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
        }
        const std::uint64_t epoch = ++epoch_counter();
        std::vector<Tensor<T>*> touched;
        auto touch = [&](const TensorPtr<T>& t) {
            if (t->adj_epoch != epoch) {
                t->adj.assign(t->data.size(), T(0));
                t->adj_epoch = epoch;
                touched.push_back(t.get());
            }
        };
        for (auto& node : nodes_) {
            touch(node.out);
            for (auto& in : node.ins) touch(in);
        }
        touch(loss);
        loss->adj[0] = T(1);

        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            it->pull();
        }

        for (Tensor<T>* t : touched) {
            if (!t->requires_grad) continue;
            if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), T(0));
            const T* a = t->adj.data();
            T* g = t->grad.data();
            for (std::size_t i = 0; i < t->data.size(); ++i) g[i] += a[i];
        }
    }

    static Tape<T>*& active() {
        thread_local Tape<T>* current = nullptr;
        return current;
    }

    // RAII activation on the current thread.
    class Scope {
    public:
        explicit Scope(Tape<T>& tape) : prev_(active()) { active() = &tape; }
        ~Scope() { active() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape<T>* prev_;
    };

private:
    static std::atomic<std::uint64_t>& epoch_counter() {
        static std::atomic<std::uint64_t> counter{0};
        return counter;
    }

    std::vector<Node> nodes_;
};

}  // namespace astromae
