#pragma once

// Entropy-guided perturbation.
//
// 1. Prototypes take one normalized gradient-ascent step on the mean entropy
//    of the target features (a temporary copy; the model is untouched).
// 2. Each target input gets a perturbation r, found by projected gradient
//    descent on its entropy against those perturbed prototypes, with
//    |r| <= radius.
// 3. L_p is the KL divergence from the clean posterior (held constant) to the
//    posterior of x + r under the original prototypes, averaged per split and
//    summed over the labeled and unlabeled target splits.

#include <optional>
#include <span>
#include <vector>

#include "ape/array.hpp"
#include "ape/graph.hpp"
#include "ape/sphere.hpp"

namespace ape {

struct PerturbConfig {
    double radius = 0.1;
    double prototype_step = 0.1;
    std::size_t search_steps = 1;
    /// Defaults to `radius` when unset.
    std::optional<double> search_step_size;

    double step_size() const noexcept { return search_step_size.value_or(radius); }
    void validate() const;
};

// ---- entropy

/// -sum_i q_i log q_i for the prototype posterior of one unit feature.
double elementwise_entropy(std::span<const double> feature, const SphericalModel& model);

/// Per-row entropies of features (m x d) under the given prototypes.
std::vector<double> entropies(const Array& features, const Array& prototypes, double temperature);

/// (m x K) log posteriors -> (m x 1) entropies.
Node entropy_rows(GraphBuilder& g, Node log_post);

// ---- perturbation search

/// Prototypes after one ascent step on the mean batch entropy, re-normalized.
/// Throws std::invalid_argument for an empty batch.
Array perturb_prototypes(const SphericalModel& model, const Array& target_features, const PerturbConfig& cfg);

/// One perturbation per input row, each with Euclidean norm <= cfg.radius.
Array find_perturbation(const SphericalModel& model, const Array& inputs, const Array& perturbed_prototypes,
                        const PerturbConfig& cfg);
std::vector<double> find_perturbation(const SphericalModel& model, std::span<const double> input,
                                      const Array& perturbed_prototypes, const PerturbConfig& cfg);

// ---- consistency loss

/// Sum over rows of KL(q || softmax) where `clean` and `clean_log` are constant
/// leaves, divided by the row count.
Node mean_kl(GraphBuilder& g, Node clean, Node clean_log, Node perturbed_log_post);

/// Everything the loss was computed from, for logging and for checks.
struct PerturbationOutcome {
    double loss = 0.0;
    Array perturbed_prototypes;
    Array r_labeled;
    Array r_unlabeled;
    Array q_labeled;            // clean posteriors
    Array q_labeled_perturbed;  // posteriors at x + r, original prototypes
    Array q_unlabeled;
    Array q_unlabeled_perturbed;
};

/// Full procedure on raw inputs. Either batch may have zero rows; with both
/// empty, or with radius 0, the loss is exactly 0.
PerturbationOutcome perturbation_loss(const Array& labeled_target, const Array& unlabeled_target,
                                      const SphericalModel& model, const PerturbConfig& cfg);

/// Inputs (rows) for the entropy/perturbation stage: clean posteriors and the
/// perturbations for one split, ready to bind as constant leaves.
struct PerturbedSplit {
    Array shifted_inputs;  // x + r
    Array clean;           // q
    Array clean_log;       // log q
};

/// Runs steps 1-2 for both splits and returns per-split constants.
/// `features_labeled` / `features_unlabeled` are the clean embeddings.
std::pair<PerturbedSplit, PerturbedSplit> prepare_perturbation(const SphericalModel& model,
                                                               const Array& labeled_inputs,
                                                               const Array& features_labeled,
                                                               const Array& unlabeled_inputs,
                                                               const Array& features_unlabeled,
                                                               const PerturbConfig& cfg);

}  // namespace ape
