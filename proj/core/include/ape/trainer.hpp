#pragma once

// Total objective L_cls + alpha L_a + beta L_e + gamma L_p, momentum SGD with
// weight decay, and the training loop.
//
// Every step samples a batch, computes the constants the objective treats
// as fixed (kernel widths, exploration targets, perturbations and clean
// posteriors) from the current model, then differentiates the objective
// graph with respect to the model parameters.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ape/data.hpp"
#include "ape/explore.hpp"
#include "ape/graph.hpp"
#include "ape/perturb.hpp"
#include "ape/sphere.hpp"

namespace ape {

struct SgdOptions {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
};

struct TrainConfig {
    double alpha = 0.1;
    double beta = 0.1;
    double gamma = 1.0;

    SgdOptions sgd;
    /// Learning rate for a 1-based step; unset means constant.
    std::function<double(std::size_t step, double base_rate)> lr_schedule;

    std::size_t steps = 500;
    std::size_t eval_interval = 50;
    std::size_t batch = 16;  // n_l

    std::vector<std::size_t> hidden = {64, 64};
    std::size_t embed_dim = 16;
    Activation activation = Activation::Tanh;
    double temperature = 0.05;

    PerturbConfig perturb;
    /// Entropy gate; unset means 0.5 log K.
    std::optional<double> entropy_threshold;
    /// Fixed RBF widths; empty means the per-batch median heuristic.
    std::vector<double> kernel_widths;

    std::uint64_t seed = 0;

    void validate() const;
    ModelSpec model_spec(std::size_t input_dim, std::size_t classes) const;
    ExploreConfig explore(std::size_t classes) const;
};

struct MetricsRecord {
    std::size_t step = 0;
    double loss_cls = 0.0;
    double loss_a = 0.0;
    double loss_p = 0.0;
    double loss_e = 0.0;
    double total = 0.0;
    double test_accuracy = 0.0;
    double intra_domain_discrepancy = 0.0;
    double gated_fraction = 0.0;

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr int kMetricsVersion = 1;

/// One JSON object, no trailing newline.
std::string to_json(const MetricsRecord& record);
void write_metrics(std::ostream& out, std::span<const MetricsRecord> records);

/// Raised when a loss component becomes NaN or infinite during training.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& component, const std::string& detail)
        : std::runtime_error("non-finite " + component + ": " + detail), component_(component) {}
    const std::string& component() const noexcept { return component_; }

private:
    std::string component_;
};

struct LossBreakdown {
    double cls = 0.0;
    double attraction = 0.0;
    double perturbation = 0.0;
    double exploration = 0.0;
    double total = 0.0;
    double gated_fraction = 0.0;
};

/// The objective graph for one batch size and architecture. Immutable once
/// built; run() may be called with any model of the same shapes.
class Objective {
public:
    Objective(const SphericalModel& model, std::size_t batch, const TrainConfig& cfg);

    struct Result {
        LossBreakdown losses;
        Gradients gradients;  // empty unless requested
    };

    Result run(const Batch& batch, const SphericalModel& model, bool with_gradient) const;

    /// Constants derived from the current model for one batch, bound to the
    /// graph as leaves that receive no gradient.
    Bindings bind(const Batch& batch, const SphericalModel& model, double* gated_fraction) const;

    const Graph& graph() const noexcept { return graph_; }
    Node cls_node() const noexcept { return cls_; }
    Node attraction_node() const noexcept { return attraction_; }
    Node perturbation_node() const noexcept { return perturbation_; }
    Node exploration_node() const noexcept { return exploration_; }

    /// Loss component that owns a node, for diagnostics.
    std::string component_of(std::uint32_t node) const;

private:
    TrainConfig cfg_;
    std::size_t batch_;
    std::size_t classes_;
    std::size_t kernel_count_;
    std::vector<std::string> parameter_names_;
    Graph graph_;
    Node cls_{};
    Node attraction_{};
    Node perturbation_{};
    Node exploration_{};
    std::vector<std::pair<std::uint32_t, std::string>> ranges_;
};

/// Loss value and components for one batch.
LossBreakdown total_loss(const Batch& batch, const SphericalModel& model, const TrainConfig& cfg);

/// Velocity buffers keyed by parameter name; created on first use.
struct SgdState {
    std::map<std::string, Array, std::less<>> velocity;
};

/// v <- momentum v + grad + weight_decay param; param <- param - lr v.
/// Prototypes are re-normalized to unit rows afterward. Parameters without a
/// gradient entry are left alone.
void sgd_step(SphericalModel& model, const Gradients& gradients, const SgdOptions& options, SgdState& state);

/// Fraction of rows whose pseudo-label matches the label.
double evaluate(const SphericalModel& model, const LabeledSet& test);

struct TrainResult {
    SphericalModel model;
    std::vector<MetricsRecord> metrics;
};

/// Called after every optimizer step with the 1-based step index.
using StepObserver = std::function<void(std::size_t step, const SphericalModel& model)>;

/// Deterministic given (task, cfg). Metrics are recorded every
/// eval_interval steps and after the last step.
TrainResult train(const SsdaTask& task, const TrainConfig& cfg, const StepObserver& observer = {});

}  // namespace ape
