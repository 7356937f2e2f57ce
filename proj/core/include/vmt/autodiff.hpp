#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "vmt/tensor.hpp"

namespace vmt {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; invalidated when the graph is
/// destroyed.
class Var {
public:
    Var() = default;
    Var(Graph* g, int id) : g_(g), id_(id) {}

    bool valid() const { return g_ != nullptr; }
    int id() const { return id_; }
    Graph* graph() const { return g_; }

    const Tensor& value() const;
    const Tensor& grad() const;
    const std::vector<std::int64_t>& shape() const { return value().shape(); }

private:
    Graph* g_ = nullptr;
    int id_ = -1;
};

/// Tape-style reverse-mode autodiff over Tensor values. Operations evaluate
/// eagerly; backward() replays the tape in reverse creation order.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var scalar(double v) { return constant(Tensor::scalar(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    /// a + s * b
    Var add_scaled(Var a, Var b, double s);
    /// x [..., C] + v [C] broadcast over all leading dims.
    Var add_bias(Var x, Var v);

    /// x [..., Cin] -> [..., Cout]; w [Cout, Cin].
    Var linear(Var x, Var w);
    Var linear(Var x, Var w, Var b);
    Var matmul(Var a, Var b);
    /// [B,m,k] x [B,k,n] -> [B,m,n]
    Var bmm(Var a, Var b);

    Var reshape(Var x, std::vector<std::int64_t> shape);
    Var permute(Var x, std::vector<int> axes);
    Var concat_last(Var a, Var b);
    /// x [N, C] with row r replaced by v [C]; the replaced row gets no gradient.
    Var set_row(Var x, std::int64_t r, Var v);
    Var row(Var x, std::int64_t r);
    /// Rows [start, start+count) of a 2-d tensor.
    Var slice_rows(Var x, std::int64_t start, std::int64_t count);

    Var softmax_last(Var x);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var gelu(Var x);

    Var sum_all(Var x);
    Var mean_all(Var x);
    Var sum_sq(Var x);
    /// mean((a - b)^2) over all elements.
    Var mse(Var a, Var b);

    /// Reverse sweep from a scalar node; fills grads of all reachable
    /// requires_grad nodes.
    void backward(Var loss);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(int id) const;
    bool grad_present(int id) const {
        return nodes_[static_cast<std::size_t>(id)].grad_seeded;
    }
    bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_seeded = false;
        std::function<void()> backward;
    };

    friend class Var;

    int push(Tensor value, bool requires_grad, std::function<void()> backward);
    void accum(int id, const Tensor& g);
    void accum_scaled(int id, const Tensor& g, double s);
    Tensor& grad_buf(int id);
    void check_graph(Var v) const;

    // Deque keeps references into existing nodes valid while new ops append,
    // so callers may hold Var::value() references across graph construction.
    std::deque<Node> nodes_;
};

}  // namespace vmt
