#pragma once

// Entropy-gated self-training on unlabeled target samples: samples whose
// prototype-posterior entropy is below a threshold take the class of their
// nearest prototype as a target.

#include <span>
#include <vector>

#include "ape/array.hpp"
#include "ape/graph.hpp"
#include "ape/sphere.hpp"

namespace ape {

struct ExploreConfig {
    double threshold = 0.0;  // entropy gate

    void validate() const;
    /// 0.5 * log K.
    static ExploreConfig default_for(std::size_t classes);
};

/// True where the row's entropy is strictly below the threshold.
std::vector<bool> alignable_mask(const Array& features, const SphericalModel& model, const ExploreConfig& cfg);

/// Index of the most similar prototype; ties go to the lowest index.
std::size_t pseudo_label(std::span<const double> feature, const SphericalModel& model);
std::vector<int> pseudo_labels(const Array& features, const Array& prototypes);

/// (m x K) targets: one-hot pseudo-label for gated rows, zeros otherwise.
/// Bound as a constant so neither the gate nor the label is differentiated.
Array exploration_targets(const Array& features, const SphericalModel& model, const ExploreConfig& cfg);

/// L_e graph term. The denominator is the full batch size.
inline Node exploration_loss(GraphBuilder& g, Node log_post, Node targets) {
    return cross_entropy(g, log_post, targets);
}

struct ExplorationOutcome {
    double loss = 0.0;
    double gated_fraction = 0.0;
};

/// L_e on raw unlabeled inputs; 0 for an empty batch.
ExplorationOutcome exploration_loss(const Array& unlabeled_inputs, const SphericalModel& model,
                                    const ExploreConfig& cfg);

}  // namespace ape
