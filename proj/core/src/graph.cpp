#include "ape/graph.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ape {

std::string_view op_name(Op op) noexcept {
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Maximum: return "maximum";
        case Op::Neg: return "neg";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Tanh: return "tanh";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Sum: return "sum";
        case Op::SumAxis: return "sum_axis";
        case Op::MaxAxis: return "max_axis";
        case Op::Broadcast: return "broadcast";
        case Op::BroadcastRows: return "broadcast_rows";
        case Op::BroadcastCols: return "broadcast_cols";
    }
    return "?";
}

namespace {

bool is_binary(Op op) {
    switch (op) {
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div:
        case Op::Maximum:
        case Op::MatMul: return true;
        default: return false;
    }
}

bool is_leaf(Op op) { return op == Op::Input || op == Op::Constant; }

std::string describe(Op op, std::uint32_t index) {
    return std::string(op_name(op)) + " (node " + std::to_string(index) + ")";
}

void require_matrix(const Shape& s, Op op) {
    if (s.size() != 2) {
        throw ShapeError(std::string(op_name(op)) + ": expected a 2-D operand, got " + to_string(s));
    }
}

// Row-major (m x k) * (k x n), optionally with either side transposed.
void gemm_accumulate(const Array& a, bool ta, const Array& b, bool tb, Array& out) {
    const std::size_t m = ta ? a.cols() : a.rows();
    const std::size_t k = ta ? a.rows() : a.cols();
    const std::size_t n = tb ? b.rows() : b.cols();
    const auto A = a.data();
    const auto B = b.data();
    auto C = out.data();
    const std::size_t lda = a.cols();
    const std::size_t ldb = b.cols();
    if (tb && !ta) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = A.data() + i * lda;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = B.data() + j * ldb;
                double acc = C[i * n + j];
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                C[i * n + j] = acc;
            }
        }
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = C.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ta ? A[p * lda + i] : A[i * lda + p];
            if (!tb) {
                const double* brow = B.data() + p * ldb;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * ldb + p];
            }
        }
    }
}

void accumulate(Array& slot, char& present, Array contribution) {
    if (!present) {
        slot = std::move(contribution);
        present = 1;
        return;
    }
    auto dst = slot.data();
    const auto src = contribution.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------- builder

Node GraphBuilder::push(detail::NodeDef def) {
    nodes_.push_back(std::move(def));
    return Node{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const detail::NodeDef& GraphBuilder::def(Node n) const {
    if (n.index >= nodes_.size()) throw std::out_of_range("GraphBuilder: unknown node");
    return nodes_[n.index];
}

const Shape& GraphBuilder::shape(Node n) const { return def(n).shape; }

Node GraphBuilder::input(std::string name, Shape shape) {
    for (const auto& d : nodes_) {
        if (d.op == Op::Input && d.name == name) {
            throw std::invalid_argument("GraphBuilder: duplicate input '" + name + "'");
        }
    }
    detail::NodeDef d;
    d.op = Op::Input;
    d.name = std::move(name);
    d.shape = std::move(shape);
    return push(std::move(d));
}

Node GraphBuilder::constant(Array value) {
    detail::NodeDef d;
    d.op = Op::Constant;
    d.shape = value.shape();
    d.constant = static_cast<std::uint32_t>(constants_.size());
    constants_.push_back(std::move(value));
    return push(std::move(d));
}

Node GraphBuilder::elementwise(Op op, Node a, Node b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    if (sa != sb) {
        throw ShapeError(std::string(op_name(op)) + ": operand shapes " + to_string(sa) + " and " +
                         to_string(sb) + " differ");
    }
    detail::NodeDef d;
    d.op = op;
    d.lhs = a.index;
    d.rhs = b.index;
    d.shape = sa;
    return push(std::move(d));
}

Node GraphBuilder::unary(Op op, Node a) {
    detail::NodeDef d;
    d.op = op;
    d.lhs = a.index;
    d.shape = shape(a);
    return push(std::move(d));
}

Node GraphBuilder::add(Node a, Node b) { return elementwise(Op::Add, a, b); }
Node GraphBuilder::sub(Node a, Node b) { return elementwise(Op::Sub, a, b); }
Node GraphBuilder::mul(Node a, Node b) { return elementwise(Op::Mul, a, b); }
Node GraphBuilder::div(Node a, Node b) { return elementwise(Op::Div, a, b); }
Node GraphBuilder::maximum(Node a, Node b) { return elementwise(Op::Maximum, a, b); }
Node GraphBuilder::neg(Node a) { return unary(Op::Neg, a); }
Node GraphBuilder::exp(Node a) { return unary(Op::Exp, a); }
Node GraphBuilder::log(Node a) { return unary(Op::Log, a); }
Node GraphBuilder::sqrt(Node a) { return unary(Op::Sqrt, a); }
Node GraphBuilder::tanh(Node a) { return unary(Op::Tanh, a); }

Node GraphBuilder::matmul(Node a, Node b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    require_matrix(sa, Op::MatMul);
    require_matrix(sb, Op::MatMul);
    if (sa[1] != sb[0]) {
        throw ShapeError("matmul: inner extents differ, " + to_string(sa) + " * " + to_string(sb));
    }
    detail::NodeDef d;
    d.op = Op::MatMul;
    d.lhs = a.index;
    d.rhs = b.index;
    d.shape = {sa[0], sb[1]};
    return push(std::move(d));
}

Node GraphBuilder::transpose(Node a) {
    const auto& sa = shape(a);
    require_matrix(sa, Op::Transpose);
    detail::NodeDef d;
    d.op = Op::Transpose;
    d.lhs = a.index;
    d.shape = {sa[1], sa[0]};
    return push(std::move(d));
}

Node GraphBuilder::sum(Node a) {
    detail::NodeDef d;
    d.op = Op::Sum;
    d.lhs = a.index;
    d.shape = {};
    return push(std::move(d));
}

Node GraphBuilder::sum_axis(Node a, std::size_t axis) {
    const auto& sa = shape(a);
    require_matrix(sa, Op::SumAxis);
    if (axis > 1) throw ShapeError("sum_axis: axis must be 0 or 1");
    detail::NodeDef d;
    d.op = Op::SumAxis;
    d.lhs = a.index;
    d.axis = axis;
    d.shape = axis == 0 ? Shape{1, sa[1]} : Shape{sa[0], 1};
    return push(std::move(d));
}

Node GraphBuilder::max_axis(Node a, std::size_t axis) {
    const auto& sa = shape(a);
    require_matrix(sa, Op::MaxAxis);
    if (axis > 1) throw ShapeError("max_axis: axis must be 0 or 1");
    if (sa[axis] == 0) throw ShapeError("max_axis: cannot reduce an empty axis");
    detail::NodeDef d;
    d.op = Op::MaxAxis;
    d.lhs = a.index;
    d.axis = axis;
    d.shape = axis == 0 ? Shape{1, sa[1]} : Shape{sa[0], 1};
    return push(std::move(d));
}

Node GraphBuilder::broadcast(Node scalar, Shape shape) {
    if (element_count(this->shape(scalar)) != 1) {
        throw ShapeError("broadcast: operand must hold one value, got " + to_string(this->shape(scalar)));
    }
    detail::NodeDef d;
    d.op = Op::Broadcast;
    d.lhs = scalar.index;
    d.shape = std::move(shape);
    return push(std::move(d));
}

Node GraphBuilder::broadcast_rows(Node row, std::size_t rows) {
    const auto& s = shape(row);
    require_matrix(s, Op::BroadcastRows);
    if (s[0] != 1) throw ShapeError("broadcast_rows: expected (1 x n), got " + to_string(s));
    detail::NodeDef d;
    d.op = Op::BroadcastRows;
    d.lhs = row.index;
    d.shape = {rows, s[1]};
    return push(std::move(d));
}

Node GraphBuilder::broadcast_cols(Node col, std::size_t cols) {
    const auto& s = shape(col);
    require_matrix(s, Op::BroadcastCols);
    if (s[1] != 1) throw ShapeError("broadcast_cols: expected (m x 1), got " + to_string(s));
    detail::NodeDef d;
    d.op = Op::BroadcastCols;
    d.lhs = col.index;
    d.shape = {s[0], cols};
    return push(std::move(d));
}

Node GraphBuilder::scale(Node a, double factor) {
    return mul(a, broadcast(scalar(factor), shape(a)));
}

Node GraphBuilder::add_scalar(Node a, double offset) {
    return add(a, broadcast(scalar(offset), shape(a)));
}

Node GraphBuilder::mean(Node a) {
    const auto n = element_count(shape(a));
    if (n == 0) throw ShapeError("mean: empty operand");
    return mul(sum(a), scalar(1.0 / static_cast<double>(n)));
}

Graph GraphBuilder::build(Node output) && {
    def(output);
    Graph g(std::move(nodes_), std::move(constants_), output.index);
    nodes_.clear();
    constants_.clear();
    return g;
}

// ---------------------------------------------------------------- graph

Graph::Graph(std::vector<detail::NodeDef> nodes, std::vector<Array> constants, std::uint32_t output)
    : nodes_(std::move(nodes)), constants_(std::move(constants)), output_(output) {}

std::vector<std::string> Graph::input_names() const {
    std::vector<std::string> names;
    for (const auto& d : nodes_) {
        if (d.op == Op::Input) names.push_back(d.name);
    }
    return names;
}

bool Graph::has_input(std::string_view name) const {
    return std::any_of(nodes_.begin(), nodes_.end(),
                       [&](const auto& d) { return d.op == Op::Input && d.name == name; });
}

Tape Graph::forward(const Bindings& bindings) const {
    Tape tape;
    tape.output_ = output_;
    tape.values_.reserve(nodes_.size());
    auto& v = tape.values_;

    for (std::uint32_t idx = 0; idx < nodes_.size(); ++idx) {
        const auto& d = nodes_[idx];
        switch (d.op) {
            case Op::Input: {
                const auto it = bindings.find(d.name);
                if (it == bindings.end()) {
                    throw std::invalid_argument("unbound leaf '" + d.name + "'");
                }
                if (it->second.shape() != d.shape) {
                    throw ShapeError("leaf '" + d.name + "' declared " + to_string(d.shape) +
                                     " but bound to " + to_string(it->second.shape()));
                }
                v.push_back(it->second);
                continue;
            }
            case Op::Constant: v.push_back(constants_[d.constant]); continue;
            default: break;
        }

        Array out(d.shape);
        auto o = out.data();
        const Array& a = v[d.lhs];
        const auto A = a.data();

        switch (d.op) {
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Maximum: {
                const auto B = v[d.rhs].data();
                for (std::size_t i = 0; i < o.size(); ++i) {
                    switch (d.op) {
                        case Op::Add: o[i] = A[i] + B[i]; break;
                        case Op::Sub: o[i] = A[i] - B[i]; break;
                        case Op::Mul: o[i] = A[i] * B[i]; break;
                        case Op::Div: o[i] = A[i] / B[i]; break;
                        default: o[i] = A[i] >= B[i] ? A[i] : B[i]; break;
                    }
                }
                break;
            }
            case Op::Neg:
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = -A[i];
                break;
            case Op::Exp:
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(A[i]);
                break;
            case Op::Log:
                for (std::size_t i = 0; i < o.size(); ++i) {
                    if (!(A[i] > 0.0)) {
                        throw NonFiniteError("log of nonpositive value at " + describe(d.op, idx), idx);
                    }
                    o[i] = std::log(A[i]);
                }
                break;
            case Op::Sqrt:
                for (std::size_t i = 0; i < o.size(); ++i) {
                    if (A[i] < 0.0) {
                        throw NonFiniteError("sqrt of negative value at " + describe(d.op, idx), idx);
                    }
                    o[i] = std::sqrt(A[i]);
                }
                break;
            case Op::Tanh:
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(A[i]);
                break;
            case Op::MatMul: gemm_accumulate(a, false, v[d.rhs], false, out); break;
            case Op::Transpose: {
                const std::size_t m = a.rows();
                const std::size_t n = a.cols();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = A[i * n + j];
                break;
            }
            case Op::Sum: {
                double s = 0.0;
                for (double x : A) s += x;
                o[0] = s;
                break;
            }
            case Op::SumAxis:
            case Op::MaxAxis: {
                const std::size_t m = a.rows();
                const std::size_t n = a.cols();
                const bool is_max = d.op == Op::MaxAxis;
                if (d.axis == 0) {
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = is_max ? A[j] : 0.0;
                        for (std::size_t i = is_max ? 1 : 0; i < m; ++i)
                            acc = is_max ? std::max(acc, A[i * n + j]) : acc + A[i * n + j];
                        o[j] = acc;
                    }
                } else {
                    for (std::size_t i = 0; i < m; ++i) {
                        double acc = is_max ? A[i * n] : 0.0;
                        for (std::size_t j = is_max ? 1 : 0; j < n; ++j)
                            acc = is_max ? std::max(acc, A[i * n + j]) : acc + A[i * n + j];
                        o[i] = acc;
                    }
                }
                break;
            }
            case Op::Broadcast: std::fill(o.begin(), o.end(), A[0]); break;
            case Op::BroadcastRows: {
                const std::size_t n = a.cols();
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = A[i % n];
                break;
            }
            case Op::BroadcastCols: {
                const std::size_t n = d.shape[1];
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = A[i / n];
                break;
            }
            case Op::Input:
            case Op::Constant: break;
        }

        if (!out.all_finite()) {
            throw NonFiniteError("non-finite value produced by " + describe(d.op, idx), idx);
        }
        v.push_back(std::move(out));
    }
    return tape;
}

Array Graph::evaluate(const Bindings& bindings) const { return forward(bindings).output(); }

Gradients Graph::backward(const Tape& tape, std::span<const std::string> wrt) const {
    return backward(tape, wrt, output());
}

Gradients Graph::backward(const Tape& tape, std::span<const std::string> wrt, Node of) const {
    if (of.index >= nodes_.size()) throw std::out_of_range("gradient: node index out of range");
    const std::uint32_t root = of.index;
    const auto& out_shape = nodes_[root].shape;
    if (element_count(out_shape) != 1) {
        throw ShapeError("gradient: output must be scalar, got " + to_string(out_shape));
    }
    const auto n_nodes = nodes_.size();

    std::vector<char> wanted(n_nodes, 0);
    std::vector<std::uint32_t> leaf_of(wrt.size());
    for (std::size_t w = 0; w < wrt.size(); ++w) {
        bool found = false;
        for (std::uint32_t i = 0; i < n_nodes; ++i) {
            if (nodes_[i].op == Op::Input && nodes_[i].name == wrt[w]) {
                wanted[i] = 1;
                leaf_of[w] = i;
                found = true;
                break;
            }
        }
        if (!found) throw std::invalid_argument("gradient: graph has no leaf '" + wrt[w] + "'");
    }

    // A node needs an adjoint only if some requested leaf feeds it.
    std::vector<char> needs(n_nodes, 0);
    for (std::uint32_t i = 0; i < n_nodes; ++i) {
        const auto& d = nodes_[i];
        if (d.op == Op::Input) {
            needs[i] = wanted[i];
        } else if (!is_leaf(d.op)) {
            needs[i] = needs[d.lhs] || (is_binary(d.op) && needs[d.rhs]);
        }
    }

    std::vector<Array> adj(n_nodes);
    std::vector<char> has(n_nodes, 0);
    adj[root] = Array::filled(out_shape, 1.0);
    has[root] = 1;

    const auto& v = tape.values_;
    for (std::uint32_t idx = root + 1; idx-- > 0;) {
        if (!has[idx] || !needs[idx]) continue;
        const auto& d = nodes_[idx];
        if (is_leaf(d.op)) continue;

        const Array& g = adj[idx];
        if (!g.all_finite()) {
            throw NonFiniteError("non-finite adjoint at " + describe(d.op, idx), idx);
        }
        const auto G = g.data();
        const Array& a = v[d.lhs];
        const auto A = a.data();
        const bool need_a = needs[d.lhs] != 0;
        const bool need_b = is_binary(d.op) && needs[d.rhs] != 0;

        auto emit_a = [&](Array c) {
            if (need_a) accumulate(adj[d.lhs], has[d.lhs], std::move(c));
        };
        auto emit_b = [&](Array c) {
            if (need_b) accumulate(adj[d.rhs], has[d.rhs], std::move(c));
        };

        switch (d.op) {
            case Op::Add:
                emit_a(g);
                emit_b(g);
                break;
            case Op::Sub: {
                emit_a(g);
                if (need_b) {
                    Array c(g.shape());
                    auto cd = c.data();
                    for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = -G[i];
                    emit_b(std::move(c));
                }
                break;
            }
            case Op::Mul:
            case Op::Div:
            case Op::Maximum: {
                const auto B = v[d.rhs].data();
                if (need_a) {
                    Array c(g.shape());
                    auto cd = c.data();
                    for (std::size_t i = 0; i < cd.size(); ++i) {
                        switch (d.op) {
                            case Op::Mul: cd[i] = G[i] * B[i]; break;
                            case Op::Div: cd[i] = G[i] / B[i]; break;
                            default: cd[i] = A[i] >= B[i] ? G[i] : 0.0; break;
                        }
                    }
                    emit_a(std::move(c));
                }
                if (need_b) {
                    Array c(g.shape());
                    auto cd = c.data();
                    for (std::size_t i = 0; i < cd.size(); ++i) {
                        switch (d.op) {
                            case Op::Mul: cd[i] = G[i] * A[i]; break;
                            case Op::Div: cd[i] = -G[i] * A[i] / (B[i] * B[i]); break;
                            default: cd[i] = A[i] >= B[i] ? 0.0 : G[i]; break;
                        }
                    }
                    emit_b(std::move(c));
                }
                break;
            }
            case Op::Neg:
            case Op::Exp:
            case Op::Log:
            case Op::Sqrt:
            case Op::Tanh: {
                const auto Y = v[idx].data();
                Array c(g.shape());
                auto cd = c.data();
                for (std::size_t i = 0; i < cd.size(); ++i) {
                    switch (d.op) {
                        case Op::Neg: cd[i] = -G[i]; break;
                        case Op::Exp: cd[i] = G[i] * Y[i]; break;
                        case Op::Log: cd[i] = G[i] / A[i]; break;
                        case Op::Sqrt: cd[i] = G[i] / (2.0 * Y[i]); break;
                        default: cd[i] = G[i] * (1.0 - Y[i] * Y[i]); break;
                    }
                }
                emit_a(std::move(c));
                break;
            }
            case Op::MatMul: {
                const Array& b = v[d.rhs];
                if (need_a) {
                    Array c(a.shape());
                    gemm_accumulate(g, false, b, true, c);
                    emit_a(std::move(c));
                }
                if (need_b) {
                    Array c(b.shape());
                    gemm_accumulate(a, true, g, false, c);
                    emit_b(std::move(c));
                }
                break;
            }
            case Op::Transpose: {
                const std::size_t m = a.rows();
                const std::size_t n = a.cols();
                Array c(a.shape());
                auto cd = c.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) cd[i * n + j] = G[j * m + i];
                emit_a(std::move(c));
                break;
            }
            case Op::Sum: emit_a(Array::filled(a.shape(), G[0])); break;
            case Op::SumAxis: {
                const std::size_t n = a.cols();
                Array c(a.shape());
                auto cd = c.data();
                for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = d.axis == 0 ? G[i % n] : G[i / n];
                emit_a(std::move(c));
                break;
            }
            case Op::MaxAxis: {
                // Subgradient: the first maximal entry takes the whole adjoint.
                const std::size_t m = a.rows();
                const std::size_t n = a.cols();
                const auto Y = v[idx].data();
                Array c(a.shape());
                auto cd = c.data();
                if (d.axis == 0) {
                    for (std::size_t j = 0; j < n; ++j)
                        for (std::size_t i = 0; i < m; ++i)
                            if (A[i * n + j] == Y[j]) {
                                cd[i * n + j] = G[j];
                                break;
                            }
                } else {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            if (A[i * n + j] == Y[i]) {
                                cd[i * n + j] = G[i];
                                break;
                            }
                }
                emit_a(std::move(c));
                break;
            }
            case Op::Broadcast: {
                double s = 0.0;
                for (double x : G) s += x;
                emit_a(Array::filled(a.shape(), s));
                break;
            }
            case Op::BroadcastRows: {
                const std::size_t n = a.cols();
                Array c(a.shape());
                auto cd = c.data();
                for (std::size_t i = 0; i < G.size(); ++i) cd[i % n] += G[i];
                emit_a(std::move(c));
                break;
            }
            case Op::BroadcastCols: {
                const std::size_t n = d.shape[1];
                Array c(a.shape());
                auto cd = c.data();
                for (std::size_t i = 0; i < G.size(); ++i) cd[i / n] += G[i];
                emit_a(std::move(c));
                break;
            }
            case Op::Input:
            case Op::Constant: break;
        }
    }

    Gradients grads;
    for (std::size_t w = 0; w < wrt.size(); ++w) {
        const auto leaf = leaf_of[w];
        Array g = has[leaf] ? adj[leaf] : Array(nodes_[leaf].shape);
        if (!g.all_finite()) throw NonFiniteError("non-finite gradient for leaf '" + wrt[w] + "'", leaf);
        grads.insert_or_assign(wrt[w], std::move(g));
    }
    return grads;
}

Gradients Graph::gradient(const Bindings& bindings, std::span<const std::string> wrt) const {
    return backward(forward(bindings), wrt);
}

}  // namespace ape
