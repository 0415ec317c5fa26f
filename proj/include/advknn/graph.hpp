#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "advknn/tensor.hpp"

namespace advknn {

enum class Op : std::uint8_t {
    Leaf,
    Affine,
    Conv2d,
    Relu,
    MaxPool2x2,
    Flatten,
    Softmax,
    Log,
    Add,
    Mul,
    ReduceSum,
    ReduceMean,
    CrossEntropy,
    KlDiv,
};

const char* op_name(Op op);

/// Floor applied to every probability before a log. Vote distributions
/// contain exact zeros, so the clamp keeps all losses finite.
inline constexpr double kLogFloor = 1e-12;

/// Straight-line computation tape with reverse-mode differentiation.
///
/// Operations compute their value immediately and append one node; node ids
/// are therefore already a topological order. Tensors held by nodes are
/// immutable once recorded. A Graph is single-writer; run independent graphs
/// for concurrent work.
template <class T>
class Graph {
public:
    using Id = std::int32_t;

    Graph();

    /// When enabled, every operation verifies its output (and log/softmax
    /// their inputs) is finite. Defaults to on in debug builds.
    void set_finite_checks(bool on) { finite_checks_ = on; }
    bool finite_checks() const { return finite_checks_; }

    Id leaf(Tensor<T> value, bool requires_grad = true);

    /// x:[n,din] w:[din,dout] b:[dout] -> [n,dout]
    Id affine(Id x, Id w, Id b);
    /// x:[n,c,h,w] w:[oc,c,k,k] (k odd) b:[oc] -> [n,oc,h,w], stride 1,
    /// zero padding preserving spatial size.
    Id conv2d(Id x, Id w, Id b);
    Id relu(Id x);
    /// x:[n,c,h,w] -> [n,c,h/2,w/2], stride 2, floor division, first-max ties.
    Id maxpool2x2(Id x);
    /// x:[n,...] -> [n, product of trailing dims]
    Id flatten(Id x);
    /// Rowwise softmax over the last axis of a [n,C] tensor.
    Id softmax(Id x);
    /// Elementwise log(max(x, kLogFloor)).
    Id log(Id x);
    Id add(Id a, Id b);
    Id mul(Id a, Id b);
    Id reduce_sum(Id x);
    Id reduce_mean(Id x);
    /// probs:[n,C] targets:[n,C] -> scalar, -(1/n) sum targets*log(clamp probs)
    Id cross_entropy(Id probs, Id targets);
    /// p:[n,C] q:[n,C] -> scalar, (1/n) sum p*(log p - log q), 0*log 0 := 0
    Id kl_div(Id p, Id q);

    const Tensor<T>& value(Id id) const;
    Op op(Id id) const;
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse-mode pass from a scalar root. Returns the gradient of root
    /// with respect to every id in `wanted`; ids not connected to the root
    /// get a zero tensor of their shape. Each node is visited once.
    std::unordered_map<Id, Tensor<T>> backward(Id root, std::span<const Id> wanted) const;

private:
    struct Node {
        Op op;
        std::vector<Id> inputs;
        Tensor<T> value;
        std::vector<std::uint32_t> aux; // maxpool argmax source offsets
        bool requires_grad = false;
    };

    Id push(Node node);
    const Node& node(Id id) const;
    void check_finite(Id id, const char* what) const;
    bool any_requires(const std::vector<Id>& ids) const;

    std::vector<Node> nodes_;
    bool finite_checks_;
};

extern template class Graph<float>;
extern template class Graph<double>;

} // namespace advknn
