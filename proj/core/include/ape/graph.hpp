#pragma once

// Minimal reverse-mode differentiation over dense arrays.
//
// A GraphBuilder records a DAG of elementary operations whose shapes are
// checked as each node is added. Building freezes it into an immutable Graph
// with one designated output. Every forward pass owns a private Tape, so a
// Graph may be evaluated from several threads at once.
//
// Broadcasting is never implicit: apart from the scalar `broadcast`, row and
// column replication are explicit nodes.

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ape/array.hpp"

namespace ape {

/// Raised when a node's operand shapes violate its shape rule, or a binding
/// does not match its leaf.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward value is NaN or infinite, e.g. log of a
/// nonpositive number.
class NonFiniteError : public std::domain_error {
public:
    NonFiniteError(const std::string& what, std::uint32_t node) : std::domain_error(what), node_(node) {}
    /// Index of the node whose value or adjoint was non-finite.
    std::uint32_t node() const noexcept { return node_; }

private:
    std::uint32_t node_;
};

enum class Op : std::uint8_t {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    MatMul,
    Transpose,
    Sum,
    SumAxis,
    MaxAxis,
    Broadcast,
    BroadcastRows,
    BroadcastCols,
};

std::string_view op_name(Op op) noexcept;

/// Handle to a node inside one builder/graph.
struct Node {
    std::uint32_t index = 0;
};

using Bindings = std::map<std::string, Array, std::less<>>;
using Gradients = std::map<std::string, Array, std::less<>>;

namespace detail {
struct NodeDef {
    Op op = Op::Constant;
    std::uint32_t lhs = 0;
    std::uint32_t rhs = 0;
    std::size_t axis = 0;
    Shape shape;
    std::string name;      // Input only
    std::uint32_t constant = 0;  // Constant only
};
}  // namespace detail

class Graph;

class GraphBuilder {
public:
    Node input(std::string name, Shape shape);
    Node constant(Array value);
    Node scalar(double value) { return constant(Array::scalar(value)); }

    Node add(Node a, Node b);
    Node sub(Node a, Node b);
    Node mul(Node a, Node b);
    Node div(Node a, Node b);
    Node maximum(Node a, Node b);

    Node neg(Node a);
    Node exp(Node a);
    Node log(Node a);
    Node sqrt(Node a);
    Node tanh(Node a);

    /// (m x k) * (k x n) -> (m x n)
    Node matmul(Node a, Node b);
    Node transpose(Node a);

    /// Sum of every element -> scalar.
    Node sum(Node a);
    /// 2-D reduction. axis 0 -> (1 x n), axis 1 -> (m x 1).
    Node sum_axis(Node a, std::size_t axis);
    Node max_axis(Node a, std::size_t axis);

    /// Scalar -> array of `shape`.
    Node broadcast(Node scalar, Shape shape);
    /// (1 x n) -> (rows x n)
    Node broadcast_rows(Node row, std::size_t rows);
    /// (m x 1) -> (m x cols)
    Node broadcast_cols(Node col, std::size_t cols);

    // Conveniences composed from the elementary ops above.
    Node scale(Node a, double factor);
    Node add_scalar(Node a, double offset);
    Node mean(Node a);

    const Shape& shape(Node n) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Freezes the recorded nodes. The builder is left empty.
    Graph build(Node output) &&;

private:
    Node push(detail::NodeDef def);
    const detail::NodeDef& def(Node n) const;
    Node elementwise(Op op, Node a, Node b);
    Node unary(Op op, Node a);

    std::vector<detail::NodeDef> nodes_;
    std::vector<Array> constants_;
};

/// Forward values of every node from one evaluation.
class Tape {
public:
    const Array& value(Node n) const { return values_.at(n.index); }
    const Array& output() const { return values_.at(output_); }

private:
    friend class Graph;
    std::vector<Array> values_;
    std::uint32_t output_ = 0;
};

class Graph {
public:
    Graph() = default;

    Node output() const noexcept { return Node{output_}; }
    const Shape& shape(Node n) const { return nodes_.at(n.index).shape; }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::vector<std::string> input_names() const;
    bool has_input(std::string_view name) const;

    /// Runs the forward pass, keeping every intermediate.
    /// Throws std::invalid_argument for an unbound leaf, ShapeError for a
    /// mis-shaped binding and NonFiniteError for a non-finite intermediate.
    Tape forward(const Bindings& bindings) const;

    /// Forward value of the output node.
    Array evaluate(const Bindings& bindings) const;

    /// d(output)/d(leaf) for each requested leaf name, using a tape from
    /// forward(). The output must be a one-element array.
    Gradients backward(const Tape& tape, std::span<const std::string> wrt) const;
    /// Same, for any one-element node instead of the output.
    Gradients backward(const Tape& tape, std::span<const std::string> wrt, Node of) const;

    Gradients gradient(const Bindings& bindings, std::span<const std::string> wrt) const;

private:
    friend class GraphBuilder;
    Graph(std::vector<detail::NodeDef> nodes, std::vector<Array> constants, std::uint32_t output);

    std::vector<detail::NodeDef> nodes_;
    std::vector<Array> constants_;
    std::uint32_t output_ = 0;
};

}  // namespace ape
