#include "ape/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ape {

void KernelSpec::validate() const {
    if (widths.empty()) throw std::invalid_argument("kernel: at least one width required");
    for (double s : widths) {
        if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("kernel: widths must be positive and finite");
    }
}

std::vector<double> KernelSpec::exponent_coefficients() const {
    validate();
    std::vector<double> c;
    c.reserve(widths.size());
    for (double s : widths) c.push_back(-1.0 / (2.0 * s * s));
    return c;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("kernel: dimension mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    }
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

double kernel(std::span<const double> a, std::span<const double> b, const KernelSpec& spec) {
    const double d = squared_distance(a, b);
    double total = 0.0;
    for (double c : spec.exponent_coefficients()) total += std::exp(c * d);
    return total / static_cast<double>(spec.widths.size());
}

double median_pairwise_sq_distance(const Array& points) {
    const std::size_t n = points.rows();
    if (n < 2) return 0.0;
    std::vector<double> d;
    d.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) d.push_back(squared_distance(points.row_span(i), points.row_span(j)));
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    const double upper = d[mid];
    if (d.size() % 2 == 1) return upper;
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

KernelSpec median_heuristic(const Array& points, std::span<const double> factors) {
    double med = median_pairwise_sq_distance(points);
    if (!(med > 1e-12)) med = 1.0;
    KernelSpec spec;
    for (double f : factors) spec.widths.push_back(std::sqrt(f * med / 2.0));
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------- graph

namespace {

Node row_sq_norms(GraphBuilder& g, Node x) { return g.sum_axis(g.mul(x, x), 1); }

}  // namespace

Node mean_kernel(GraphBuilder& g, Node x, Node y, std::span<const Node> coefficients) {
    if (coefficients.empty()) throw std::invalid_argument("kernel: at least one width required");
    const Shape sx = g.shape(x);
    const Shape sy = g.shape(y);
    if (sx.size() != 2 || sy.size() != 2 || sx[1] != sy[1]) {
        throw ShapeError("kernel: point sets " + to_string(sx) + " and " + to_string(sy) + " are incompatible");
    }
    if (sx[0] == 0 || sy[0] == 0) throw std::invalid_argument("mmd: empty point set");
    const std::size_t m = sx[0];
    const std::size_t n = sy[0];

    const Node xx = g.broadcast_cols(row_sq_norms(g, x), n);
    const Node yy = g.broadcast_rows(g.transpose(row_sq_norms(g, y)), m);
    const Node cross = g.matmul(x, g.transpose(y));
    Node dist = g.sub(g.add(xx, yy), g.scale(cross, 2.0));
    // Cancellation can leave tiny negative distances.
    dist = g.maximum(dist, g.broadcast(g.scalar(0.0), {m, n}));

    Node total{};
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
        const Node k = g.exp(g.mul(dist, g.broadcast(coefficients[i], {m, n})));
        total = i == 0 ? k : g.add(total, k);
    }
    return g.scale(g.sum(total), 1.0 / static_cast<double>(coefficients.size() * m * n));
}

Node mmd_sq(GraphBuilder& g, Node a, Node b, std::span<const Node> coefficients) {
    const Node kaa = mean_kernel(g, a, a, coefficients);
    const Node kbb = mean_kernel(g, b, b, coefficients);
    const Node kab = mean_kernel(g, a, b, coefficients);
    return g.sub(g.add(kaa, kbb), g.scale(kab, 2.0));
}

Node mmd_sq(GraphBuilder& g, Node a, Node b, const KernelSpec& spec) {
    std::vector<Node> coefs;
    for (double c : spec.exponent_coefficients()) coefs.push_back(g.scalar(c));
    return mmd_sq(g, a, b, coefs);
}

std::vector<Node> declare_kernel_coefficients(GraphBuilder& g, std::size_t count, const std::string& prefix) {
    std::vector<Node> nodes;
    for (std::size_t i = 0; i < count; ++i) nodes.push_back(g.input(prefix + std::to_string(i), {}));
    return nodes;
}

void bind_kernel_coefficients(const KernelSpec& spec, Bindings& bindings, const std::string& prefix) {
    const auto coefs = spec.exponent_coefficients();
    for (std::size_t i = 0; i < coefs.size(); ++i) {
        bindings.insert_or_assign(prefix + std::to_string(i), Array::scalar(coefs[i]));
    }
}

MmdWithGradient mmd_sq_with_gradient(const Array& a, const Array& b, const KernelSpec& spec) {
    if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("mmd: empty point set");
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("mmd: point sets " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                                    " are incompatible");
    }
    GraphBuilder g;
    const Node na = g.input("a", a.shape());
    const Node nb = g.input("b", b.shape());
    const Graph graph = std::move(g).build(mmd_sq(g, na, nb, spec));
    const Tape tape = graph.forward({{"a", a}, {"b", b}});
    const std::string wrt[] = {"a", "b"};
    auto grads = graph.backward(tape, wrt);
    return {tape.output().item(), std::move(grads.at("a")), std::move(grads.at("b"))};
}

double mmd_sq(const Array& a, const Array& b, const KernelSpec& spec) {
    if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("mmd: empty point set");
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("mmd: point sets " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                                    " are incompatible");
    }
    GraphBuilder g;
    const Node na = g.input("a", a.shape());
    const Node nb = g.input("b", b.shape());
    const Graph graph = std::move(g).build(mmd_sq(g, na, nb, spec));
    return graph.evaluate({{"a", a}, {"b", b}}).item();
}

}  // namespace ape
