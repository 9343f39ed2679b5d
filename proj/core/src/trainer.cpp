#include "ape/trainer.hpp"

#include <cmath>
#include <ostream>
#include <random>

#include <json.hpp>

#include "ape/discrepancy.hpp"

namespace ape {

void TrainConfig::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
        throw std::invalid_argument("train: loss weights must be nonnegative");
    }
    if (!(sgd.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
    if (!(sgd.momentum >= 0.0) || !(sgd.weight_decay >= 0.0)) {
        throw std::invalid_argument("train: momentum and weight_decay must be nonnegative");
    }
    if (eval_interval == 0) throw std::invalid_argument("train: eval_interval must be positive");
    if (batch == 0) throw std::invalid_argument("train: batch must be positive");
    if (embed_dim == 0) throw std::invalid_argument("train: embed_dim must be positive");
    if (!(temperature > 0.0)) throw std::invalid_argument("train: temperature must be positive");
    perturb.validate();
    if (entropy_threshold && !(*entropy_threshold >= 0.0)) {
        throw std::invalid_argument("train: entropy_threshold must be >= 0");
    }
    if (!kernel_widths.empty()) KernelSpec{kernel_widths}.validate();
}

ModelSpec TrainConfig::model_spec(std::size_t input_dim, std::size_t classes) const {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.hidden = hidden;
    spec.embed_dim = embed_dim;
    spec.classes = classes;
    spec.activation = activation;
    spec.temperature = temperature;
    return spec;
}

ExploreConfig TrainConfig::explore(std::size_t classes) const {
    return entropy_threshold ? ExploreConfig{*entropy_threshold} : ExploreConfig::default_for(classes);
}

// ---------------------------------------------------------------- metrics

std::string to_json(const MetricsRecord& r) {
    nlohmann::ordered_json j;
    j["format_version"] = kMetricsVersion;
    j["step"] = r.step;
    j["loss_cls"] = r.loss_cls;
    j["loss_a"] = r.loss_a;
    j["loss_p"] = r.loss_p;
    j["loss_e"] = r.loss_e;
    j["total"] = r.total;
    j["test_accuracy"] = r.test_accuracy;
    j["intra_domain_discrepancy"] = r.intra_domain_discrepancy;
    j["gated_fraction"] = r.gated_fraction;
    return j.dump();
}

void write_metrics(std::ostream& out, std::span<const MetricsRecord> records) {
    for (const auto& r : records) out << to_json(r) << '\n';
}

// ---------------------------------------------------------------- objective

namespace {

constexpr const char* kKernelPrefix = "kernel_coef";

std::size_t kernel_count(const TrainConfig& cfg) {
    return cfg.kernel_widths.empty() ? kDefaultWidthFactors.size() : cfg.kernel_widths.size();
}

}  // namespace

Objective::Objective(const SphericalModel& model, std::size_t batch, const TrainConfig& cfg)
    : cfg_(cfg),
      batch_(batch),
      classes_(model.classes()),
      kernel_count_(kernel_count(cfg)),
      parameter_names_(model.parameter_names()) {
    cfg.validate();
    model.validate();
    if (batch == 0) throw std::invalid_argument("objective: batch must be positive");
    const std::size_t in = model.input_dim();
    const std::size_t K = model.classes();
    const double T = model.temperature;

    GraphBuilder g;
    auto mark = [&](const char* component) {
        ranges_.emplace_back(static_cast<std::uint32_t>(g.node_count()), component);
    };

    mark("parameters");
    const auto params = declare_parameters(g, model);

    // Labeled rows are source then labeled target, so one embedding pass
    // serves both the classification loss and the attraction loss.
    mark("loss_cls");
    const Node x_l = g.input("x_labeled", {2 * batch, in});
    const Node y_l = g.input("y_labeled", {2 * batch, K});
    const Node f_l = embed(g, params, model.activation, x_l);
    cls_ = cross_entropy(g, log_softmax_rows(g, similarity_logits(g, f_l, params.prototypes, T)), y_l);

    mark("loss_e");
    const Node x_u = g.input("x_unlabeled", {2 * batch, in});
    const Node e_u = g.input("explore_targets", {2 * batch, K});
    const Node f_u = embed(g, params, model.activation, x_u);
    exploration_ = exploration_loss(g, log_softmax_rows(g, similarity_logits(g, f_u, params.prototypes, T)), e_u);

    mark("loss_a");
    const auto coefs = declare_kernel_coefficients(g, kernel_count_, kKernelPrefix);
    attraction_ = attraction_loss(g, f_l, f_u, coefs);

    // Perturbed rows: labeled target (batch) then unlabeled target (2 batch).
    // The clean posterior arrives pre-multiplied by the per-split 1/m so one
    // sum yields mean_t KL + mean_u KL.
    mark("loss_p");
    const Node x_p = g.input("x_perturbed", {3 * batch, in});
    const Node q_w = g.input("clean_weighted", {3 * batch, K});
    const Node q_log = g.input("clean_log", {3 * batch, K});
    const Node lp_p =
        log_softmax_rows(g, similarity_logits(g, embed(g, params, model.activation, x_p), params.prototypes, T));
    perturbation_ = g.sum(g.mul(q_w, g.sub(q_log, lp_p)));

    mark("total");
    Node total = cls_;
    auto add_term = [&](double weight, Node term) {
        if (weight != 0.0) total = g.add(total, g.mul(g.scalar(weight), term));
    };
    add_term(cfg.alpha, attraction_);
    add_term(cfg.beta, exploration_);
    add_term(cfg.gamma, perturbation_);
    graph_ = std::move(g).build(total);
}

std::string Objective::component_of(std::uint32_t node) const {
    std::string name = "objective";
    for (const auto& [start, component] : ranges_) {
        if (node >= start) name = component;
    }
    return name;
}

Bindings Objective::bind(const Batch& batch, const SphericalModel& model, double* gated_fraction) const {
    const std::size_t n = batch_;
    if (batch.source.size() != n || batch.target.size() != n || batch.unlabeled.rows() != 2 * n) {
        throw std::invalid_argument("objective: batch sizes do not match n_l = " + std::to_string(n));
    }
    Bindings b;
    bind_parameters(model, b);

    const Array x_l = vstack(batch.source.inputs, batch.target.inputs);
    std::vector<int> y_l = batch.source.labels;
    y_l.insert(y_l.end(), batch.target.labels.begin(), batch.target.labels.end());

    // Direct-path failures are attributed to the first loss that consumes
    // the offending constant.
    auto stage = [](const char* component, auto&& compute) {
        try {
            return compute();
        } catch (const DegenerateInput&) {
            throw;
        } catch (const std::domain_error& e) {
            throw NonFiniteLoss(component, e.what());
        }
    };

    const Array f_l = stage("loss_cls", [&] { return extract(model, x_l); });
    const Array f_t = stage("loss_p", [&] { return extract(model, batch.target.inputs); });
    const Array f_u = stage("loss_a", [&] { return extract(model, batch.unlabeled); });

    const KernelSpec kernel = stage("loss_a", [&] {
        return cfg_.kernel_widths.empty() ? median_heuristic(vstack(f_l, f_u)) : KernelSpec{cfg_.kernel_widths};
    });
    bind_kernel_coefficients(kernel, b, kKernelPrefix);

    const Array targets = stage("loss_e", [&] { return exploration_targets(f_u, model, cfg_.explore(classes_)); });
    if (gated_fraction != nullptr) {
        double gated = 0.0;
        for (double v : targets.data()) gated += v;
        *gated_fraction = gated / static_cast<double>(targets.rows());
    }

    auto [split_t, split_u] = stage("loss_p", [&] {
        return prepare_perturbation(model, batch.target.inputs, f_t, batch.unlabeled, f_u, cfg_.perturb);
    });
    auto weight_rows = [](Array q, double w) {
        for (double& v : q.data()) v *= w;
        return q;
    };
    b.insert_or_assign("x_perturbed", vstack(split_t.shifted_inputs, split_u.shifted_inputs));
    b.insert_or_assign("clean_weighted",
                       vstack(weight_rows(std::move(split_t.clean), 1.0 / static_cast<double>(n)),
                              weight_rows(std::move(split_u.clean), 1.0 / static_cast<double>(2 * n))));
    b.insert_or_assign("clean_log", vstack(split_t.clean_log, split_u.clean_log));

    b.insert_or_assign("x_labeled", x_l);
    b.insert_or_assign("y_labeled", one_hot(y_l, classes_));
    b.insert_or_assign("x_unlabeled", batch.unlabeled);
    b.insert_or_assign("explore_targets", targets);
    return b;
}

Objective::Result Objective::run(const Batch& batch, const SphericalModel& model, bool with_gradient) const {
    Result result;
    const Bindings b = bind(batch, model, &result.losses.gated_fraction);
    try {
        const Tape tape = graph_.forward(b);
        result.losses.cls = tape.value(cls_).item();
        result.losses.attraction = tape.value(attraction_).item();
        result.losses.exploration = tape.value(exploration_).item();
        result.losses.perturbation = tape.value(perturbation_).item();
        result.losses.total = tape.output().item();
        if (with_gradient) result.gradients = graph_.backward(tape, parameter_names_);
    } catch (const NonFiniteError& e) {
        throw NonFiniteLoss(component_of(e.node()), e.what());
    }
    return result;
}

LossBreakdown total_loss(const Batch& batch, const SphericalModel& model, const TrainConfig& cfg) {
    const Objective objective(model, batch.source.size(), cfg);
    return objective.run(batch, model, false).losses;
}

// ---------------------------------------------------------------- optimizer

void sgd_step(SphericalModel& model, const Gradients& gradients, const SgdOptions& options, SgdState& state) {
    for (const auto& name : model.parameter_names()) {
        const auto it = gradients.find(name);
        if (it == gradients.end()) continue;
        Array& param = model.parameter(name);
        const Array& grad = it->second;
        if (grad.shape() != param.shape()) {
            throw std::invalid_argument("sgd_step: gradient for '" + name + "' has shape " + to_string(grad.shape()) +
                                        ", parameter has " + to_string(param.shape()));
        }
        auto [vit, inserted] = state.velocity.try_emplace(name, Array(param.shape()));
        Array& vel = vit->second;
        auto v = vel.data();
        auto p = param.data();
        const auto gd = grad.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = options.momentum * v[i] + gd[i] + options.weight_decay * p[i];
            p[i] -= options.learning_rate * v[i];
        }
    }
    normalize_rows(model.prototypes);
}

double evaluate(const SphericalModel& model, const LabeledSet& test) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    const auto predicted = pseudo_labels(extract(model, test.inputs), model.prototypes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------- loop

TrainResult train(const SsdaTask& task, const TrainConfig& cfg, const StepObserver& observer) {
    cfg.validate();
    check_task(task);
    TrainResult result{make_model(cfg.model_spec(task.input_dim, task.classes), cfg.seed), {}};
    if (cfg.steps == 0) return result;

    const Objective objective(result.model, cfg.batch, cfg);
    std::seed_seq batch_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0xba7cu};
    std::mt19937_64 rng(batch_seed);
    SgdState state;

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const Batch batch = sample_batch(task, cfg.batch, rng);
        auto [losses, grads] = objective.run(batch, result.model, true);

        SgdOptions options = cfg.sgd;
        if (cfg.lr_schedule) options.learning_rate = cfg.lr_schedule(step, cfg.sgd.learning_rate);
        sgd_step(result.model, grads, options, state);
        if (observer) observer(step, result.model);

        if (step % cfg.eval_interval == 0 || step == cfg.steps) {
            MetricsRecord r;
            r.step = step;
            r.loss_cls = losses.cls;
            r.loss_a = losses.attraction;
            r.loss_p = losses.perturbation;
            r.loss_e = losses.exploration;
            r.total = losses.total;
            r.intra_domain_discrepancy = losses.attraction;
            r.gated_fraction = losses.gated_fraction;
            r.test_accuracy = evaluate(result.model, task.target_test);
            result.metrics.push_back(r);
        }
    }
    return result;
}

}  // namespace ape
