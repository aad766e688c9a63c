#include "nsdesk/diffcore/graph.hpp"

#include <string>

namespace nsdesk {

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
    if (!value.all_finite()) {
        throw NumericError("graph input of shape " + shape_str(value.shape()) +
                           " contains a non-finite scalar");
    }
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, Tensor<T> value, std::vector<NodeId> inputs,
                        BackwardFn backward) {
    bool req = false;
    for (NodeId in : inputs) {
        req = req || nodes_[in].requires_grad;
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.requires_grad = req;
    n.inputs = std::move(inputs);
    if (req) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record_detached(std::string_view op, Tensor<T> value, std::vector<NodeId> inputs) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        n.grad = Tensor<T>(n.value.shape());
    }
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> output) {
    if (output.graph != this) {
        throw Error("backward: output belongs to a different graph");
    }
    const Node& out = nodes_.at(output.id);
    if (out.value.size() != 1) {
        throw ShapeError("backward: output of shape " + shape_str(out.value.shape()) +
                         " is not a scalar");
    }
    if (backward_done_) {
        throw Error("backward: reverse pass already ran on this graph; call reset_grads() first");
    }
    backward_done_ = true;
    if (!out.requires_grad) {
        return;
    }
    grad_buffer(output.id).fill(T(1));
    for (NodeId id = output.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || !n.backward || n.grad.empty()) {
            continue;
        }
        n.backward(*this, id);
    }
}

template <typename T>
void Graph<T>::reset_grads() {
    for (Node& n : nodes_) {
        n.grad = Tensor<T>();
    }
    backward_done_ = false;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace nsdesk
