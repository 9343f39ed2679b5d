#pragma once

// Mixture-of-RBF kernel and the biased (V-statistic) squared MMD between two
// sets of embeddings. The attraction loss is this MMD between the labeled
// features (source and labeled target) and the unlabeled target features.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ape/array.hpp"
#include "ape/graph.hpp"

namespace ape {

/// k(a, b) = (1/N) sum_i exp(-|a - b|^2 / (2 sigma_i^2))
struct KernelSpec {
    std::vector<double> widths;

    /// Throws std::invalid_argument unless N >= 1 and every sigma > 0.
    void validate() const;

    /// -1 / (2 sigma_i^2) for each width.
    std::vector<double> exponent_coefficients() const;
};

/// Multipliers applied to the median pairwise squared distance.
inline constexpr std::array<double, 5> kDefaultWidthFactors{0.25, 0.5, 1.0, 2.0, 4.0};

double squared_distance(std::span<const double> a, std::span<const double> b);
double kernel(std::span<const double> a, std::span<const double> b, const KernelSpec& spec);

/// Median of |x_i - x_j|^2 over pairs i < j; 0 for fewer than two rows.
double median_pairwise_sq_distance(const Array& points);

/// Widths with 2 sigma_i^2 = factor_i * median squared distance. Falls back
/// to a unit median when every point coincides.
KernelSpec median_heuristic(const Array& points, std::span<const double> factors = kDefaultWidthFactors);

/// Squared MMD with full biased means (self-pairs included).
double mmd_sq(const Array& a, const Array& b, const KernelSpec& spec);

struct MmdWithGradient {
    double value = 0.0;
    Array grad_a;
    Array grad_b;
};
MmdWithGradient mmd_sq_with_gradient(const Array& a, const Array& b, const KernelSpec& spec);

// ---- graph assembly

/// Mean of k(x_i, y_j) over all pairs. `coefficients` are scalar nodes
/// holding -1 / (2 sigma^2).
Node mean_kernel(GraphBuilder& g, Node x, Node y, std::span<const Node> coefficients);

Node mmd_sq(GraphBuilder& g, Node a, Node b, std::span<const Node> coefficients);
Node mmd_sq(GraphBuilder& g, Node a, Node b, const KernelSpec& spec);

/// L_a: squared MMD between labeled and unlabeled feature sets.
inline Node attraction_loss(GraphBuilder& g, Node labeled, Node unlabeled, std::span<const Node> coefficients) {
    return mmd_sq(g, labeled, unlabeled, coefficients);
}

/// Declares `count` scalar leaves named prefix0, prefix1, ...
std::vector<Node> declare_kernel_coefficients(GraphBuilder& g, std::size_t count, const std::string& prefix);
void bind_kernel_coefficients(const KernelSpec& spec, Bindings& bindings, const std::string& prefix);

}  // namespace ape
