#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "nsdesk/diffcore/tensor.hpp"

namespace nsdesk {

template <typename T>
class Graph;

using NodeId = std::size_t;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    NodeId id = 0;

    const Tensor<T>& value() const;
    const Tensor<T>& grad() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
};

// Eager tape. Every primitive computes its value when recorded; backward()
// replays the tape in reverse. Nodes are appended in evaluation order, so the
// record is topologically sorted by construction.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, NodeId self)>;

    struct Node {
        std::string_view op;
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::vector<NodeId> inputs;
        BackwardFn backward;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf bound to caller data. Rejects non-finite scalars.
    Var<T> input(Tensor<T> value, bool requires_grad = false);
    Var<T> constant(Tensor<T> value) { return input(std::move(value), false); }

    // Records a primitive application. requires_grad is inherited from inputs.
    Var<T> record(std::string_view op, Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward);

    // Records a value that never propagates gradient (e.g. sign).
    Var<T> record_detached(std::string_view op, Tensor<T> value, std::vector<NodeId> inputs);

    // Populates grad for every requiring node reachable from `output`, which
    // must be a one-element tensor. A second call without reset_grads() throws.
    void backward(Var<T> output);

    void reset_grads();

    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }

    // Gradient buffer, zero-initialised on first access.
    Tensor<T>& grad_buffer(NodeId id);

    const Tensor<T>& grad(NodeId id) const { return nodes_.at(id).grad; }

private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph->value(id);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
    return graph->grad(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
    return graph->node(id).requires_grad;
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace nsdesk
