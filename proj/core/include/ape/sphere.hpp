#pragma once

// Spherical feature space: an MLP extractor whose output is projected onto the
// unit sphere, K unit-norm class prototypes and a temperature-scaled cosine
// softmax classifier.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ape/array.hpp"
#include "ape/graph.hpp"

namespace ape {

/// An input whose pre-normalization embedding is the zero vector.
class DegenerateInput : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

enum class Activation { Tanh, Relu, Linear };

std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view name);

struct ModelSpec {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t embed_dim = 16;
    std::size_t classes = 3;
    Activation activation = Activation::Tanh;
    double temperature = 0.05;
};

/// Extractor parameters plus prototypes. Layer l maps rows of width in_l to
/// width out_l as h * W_l + b_l; hidden layers apply `activation`, the last
/// layer is linear and is followed by unit normalization.
struct SphericalModel {
    std::vector<Array> weights;  // (in_l x out_l)
    std::vector<Array> biases;   // (1 x out_l)
    Array prototypes;            // (K x d), unit rows
    double temperature = 0.05;
    Activation activation = Activation::Tanh;

    std::size_t layer_count() const noexcept { return weights.size(); }
    std::size_t input_dim() const;
    std::size_t embed_dim() const noexcept { return prototypes.cols(); }
    std::size_t classes() const noexcept { return prototypes.rows(); }

    /// "w0", "b0", "w1", ..., "prototypes".
    std::vector<std::string> parameter_names() const;
    const Array& parameter(std::string_view name) const;
    Array& parameter(std::string_view name);

    /// Throws std::invalid_argument when layer shapes do not chain or T <= 0.
    void validate() const;

    friend bool operator==(const SphericalModel&, const SphericalModel&) = default;
};

/// Xavier-normal weights, small Gaussian biases, unit-normalized Gaussian
/// prototypes.
SphericalModel make_model(const ModelSpec& spec, std::uint64_t seed);

/// Rescales every row of a 2-D array to unit Euclidean norm.
void normalize_rows(Array& a);

/// Softmax over K prototype similarities; sums to one within 1e-9.
class ProbVector {
public:
    explicit ProbVector(std::vector<double> probs);
    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const noexcept { return probs_[i]; }
    std::span<const double> values() const noexcept { return probs_; }

private:
    std::vector<double> probs_;
};

// ---- direct evaluation

/// (m x input_dim) -> (m x embed_dim) with unit rows.
Array extract(const SphericalModel& model, const Array& inputs);
std::vector<double> extract(const SphericalModel& model, std::span<const double> input);

/// Pre-normalization output of the final layer.
Array raw_embedding(const SphericalModel& model, const Array& inputs);

/// Cosine similarities p_k . f for each row of `features` -> (m x K).
Array similarities(const Array& features, const Array& prototypes);

/// Row-wise log softmax of similarity / T, computed with the max shift.
Array log_posteriors(const Array& features, const Array& prototypes, double temperature);

/// Posterior for one unit feature. Throws std::invalid_argument if the feature
/// norm is off by more than 1e-6.
ProbVector class_posteriors(std::span<const double> feature, const SphericalModel& model);
ProbVector class_posteriors(std::span<const double> feature, const Array& prototypes, double temperature);

/// Mean negative log posterior of the true class.
double classification_loss(const SphericalModel& model, const Array& inputs, std::span<const int> labels);

/// (m x K) indicator matrix; throws on labels outside [0, K).
Array one_hot(std::span<const int> labels, std::size_t classes);

// ---- graph assembly

struct ModelNodes {
    std::vector<Node> weights;
    std::vector<Node> biases;
    Node prototypes;
};

/// Declares one input leaf per parameter, named as in parameter_names().
ModelNodes declare_parameters(GraphBuilder& g, const SphericalModel& model);
void bind_parameters(const SphericalModel& model, Bindings& bindings);

Node raw_embedding(GraphBuilder& g, const ModelNodes& params, Activation act, Node inputs);
Node normalize_rows(GraphBuilder& g, Node rows);
Node embed(GraphBuilder& g, const ModelNodes& params, Activation act, Node inputs);

/// features * prototypes^T / T
Node similarity_logits(GraphBuilder& g, Node features, Node prototypes, double temperature);
Node log_softmax_rows(GraphBuilder& g, Node logits);

/// Mean over rows of -sum_k targets[i,k] * log_post[i,k]. Rows of `targets`
/// are one-hot for ordinary cross-entropy and may be all-zero to mask a row.
Node cross_entropy(GraphBuilder& g, Node log_post, Node targets);

/// Builds L_cls for a labeled batch and returns its value and parameter
/// gradients; used by tests and tooling outside the trainer.
struct LossAndGradient {
    double value = 0.0;
    Gradients gradients;
};
LossAndGradient classification_loss_with_gradient(const SphericalModel& model, const Array& inputs,
                                                  std::span<const int> labels);

}  // namespace ape
