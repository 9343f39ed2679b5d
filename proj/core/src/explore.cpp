#include "ape/explore.hpp"

#include <cmath>
#include <stdexcept>

#include "ape/perturb.hpp"

namespace ape {

void ExploreConfig::validate() const {
    if (!(threshold >= 0.0)) throw std::invalid_argument("explore: entropy threshold must be >= 0");
}

ExploreConfig ExploreConfig::default_for(std::size_t classes) {
    return ExploreConfig{0.5 * std::log(static_cast<double>(classes))};
}

std::vector<bool> alignable_mask(const Array& features, const SphericalModel& model, const ExploreConfig& cfg) {
    cfg.validate();
    const auto h = entropies(features, model.prototypes, model.temperature);
    std::vector<bool> mask(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) mask[i] = h[i] < cfg.threshold;
    return mask;
}

std::vector<int> pseudo_labels(const Array& features, const Array& prototypes) {
    const Array sim = similarities(features, prototypes);
    std::vector<int> labels(sim.rows(), 0);
    for (std::size_t i = 0; i < sim.rows(); ++i) {
        const auto row = sim.row_span(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

std::size_t pseudo_label(std::span<const double> feature, const SphericalModel& model) {
    const Array f({1, feature.size()}, std::vector<double>(feature.begin(), feature.end()));
    return static_cast<std::size_t>(pseudo_labels(f, model.prototypes).front());
}

Array exploration_targets(const Array& features, const SphericalModel& model, const ExploreConfig& cfg) {
    const auto mask = alignable_mask(features, model, cfg);
    const auto labels = pseudo_labels(features, model.prototypes);
    Array targets({features.rows(), model.classes()});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (mask[i]) targets.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return targets;
}

ExplorationOutcome exploration_loss(const Array& unlabeled_inputs, const SphericalModel& model,
                                    const ExploreConfig& cfg) {
    cfg.validate();
    if (unlabeled_inputs.rows() == 0) return {};
    const Array features = extract(model, unlabeled_inputs);
    const Array targets = exploration_targets(features, model, cfg);
    const Array lp = log_posteriors(features, model.prototypes, model.temperature);
    double total = 0.0;
    double gated = 0.0;
    for (std::size_t i = 0; i < lp.rows(); ++i) {
        for (std::size_t c = 0; c < lp.cols(); ++c) {
            total -= targets.at(i, c) * lp.at(i, c);
            gated += targets.at(i, c);
        }
    }
    const auto m = static_cast<double>(lp.rows());
    return {total / m, gated / m};
}

}  // namespace ape
