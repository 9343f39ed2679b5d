#include "ape/perturb.hpp"

#include <cmath>
#include <stdexcept>

namespace ape {

void PerturbConfig::validate() const {
    if (!(radius >= 0.0) || !std::isfinite(radius)) throw std::invalid_argument("perturb: radius must be >= 0");
    if (!(prototype_step >= 0.0)) throw std::invalid_argument("perturb: prototype_step must be >= 0");
    if (search_steps == 0) throw std::invalid_argument("perturb: search_steps must be positive");
    if (!(step_size() >= 0.0)) throw std::invalid_argument("perturb: search_step_size must be >= 0");
}

// ---------------------------------------------------------------- entropy

std::vector<double> entropies(const Array& features, const Array& prototypes, double temperature) {
    const Array lp = log_posteriors(features, prototypes, temperature);
    std::vector<double> h(lp.rows(), 0.0);
    for (std::size_t i = 0; i < lp.rows(); ++i) {
        double s = 0.0;
        for (double l : lp.row_span(i)) s -= std::exp(l) * l;
        h[i] = s;
    }
    return h;
}

double elementwise_entropy(std::span<const double> feature, const SphericalModel& model) {
    // Validates the unit-norm precondition.
    (void)class_posteriors(feature, model);
    const Array f({1, feature.size()}, std::vector<double>(feature.begin(), feature.end()));
    return entropies(f, model.prototypes, model.temperature).front();
}

Node entropy_rows(GraphBuilder& g, Node log_post) {
    return g.neg(g.sum_axis(g.mul(g.exp(log_post), log_post), 1));
}

// ---------------------------------------------------------------- search

Array perturb_prototypes(const SphericalModel& model, const Array& target_features, const PerturbConfig& cfg) {
    cfg.validate();
    if (target_features.rows() == 0) throw std::invalid_argument("perturb_prototypes: empty batch");
    if (cfg.prototype_step == 0.0) return model.prototypes;

    GraphBuilder g;
    const Node f = g.input("features", target_features.shape());
    const Node p = g.input("prototypes", model.prototypes.shape());
    const Node h = entropy_rows(g, log_softmax_rows(g, similarity_logits(g, f, p, model.temperature)));
    const Graph graph = std::move(g).build(g.mean(h));

    const std::string wrt[] = {"prototypes"};
    const auto grads = graph.gradient({{"features", target_features}, {"prototypes", model.prototypes}}, wrt);
    const Array& grad = grads.at("prototypes");

    Array out = model.prototypes;
    auto o = out.data();
    const auto gd = grad.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += cfg.prototype_step * gd[i];
    normalize_rows(out);
    return out;
}

namespace {

void project_to_ball(std::span<double> r, double radius) {
    if (radius == 0.0) {
        std::fill(r.begin(), r.end(), 0.0);
        return;
    }
    double sq = 0.0;
    for (double v : r) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm <= radius) return;
    const double s = radius / norm;
    for (double& v : r) v *= s;
    // Rounding can leave the norm a few ulps above the bound.
    sq = 0.0;
    for (double v : r) sq += v * v;
    if (std::sqrt(sq) > radius) {
        for (double& v : r) v *= (1.0 - 4.0 * std::numeric_limits<double>::epsilon());
    }
}

}  // namespace

Array find_perturbation(const SphericalModel& model, const Array& inputs, const Array& perturbed_prototypes,
                        const PerturbConfig& cfg) {
    cfg.validate();
    if (inputs.rank() != 2 || inputs.cols() != model.input_dim()) {
        throw std::invalid_argument("find_perturbation: inputs " + to_string(inputs.shape()) +
                                    " do not match input width " + std::to_string(model.input_dim()));
    }
    Array r(inputs.shape());
    if (cfg.radius == 0.0 || inputs.rows() == 0 || cfg.step_size() == 0.0) return r;

    GraphBuilder g;
    const auto params = declare_parameters(g, model);
    const Node x = g.input("x", inputs.shape());
    const Node rn = g.input("r", inputs.shape());
    const Node p = g.input("perturbed_prototypes", perturbed_prototypes.shape());
    const Node f = embed(g, params, model.activation, g.add(x, rn));
    // Rows are independent, so the gradient of the summed entropy is the
    // per-row gradient.
    const Node h = g.sum(entropy_rows(g, log_softmax_rows(g, similarity_logits(g, f, p, model.temperature))));
    const Graph graph = std::move(g).build(h);

    Bindings b;
    bind_parameters(model, b);
    b.insert_or_assign("x", inputs);
    b.insert_or_assign("perturbed_prototypes", perturbed_prototypes);
    const std::string wrt[] = {"r"};

    const double step = cfg.step_size();
    for (std::size_t s = 0; s < cfg.search_steps; ++s) {
        b.insert_or_assign("r", r);
        const Array grad = graph.gradient(b, wrt).at("r");
        for (std::size_t i = 0; i < r.rows(); ++i) {
            const auto gi = grad.row_span(i);
            auto ri = r.row_span(i);
            double sq = 0.0;
            for (double v : gi) sq += v * v;
            const double norm = std::sqrt(sq);
            if (norm > 0.0) {
                for (std::size_t j = 0; j < ri.size(); ++j) ri[j] -= step * gi[j] / norm;
            }
            project_to_ball(ri, cfg.radius);
        }
    }
    return r;
}

std::vector<double> find_perturbation(const SphericalModel& model, std::span<const double> input,
                                      const Array& perturbed_prototypes, const PerturbConfig& cfg) {
    const Array x({1, input.size()}, std::vector<double>(input.begin(), input.end()));
    const Array r = find_perturbation(model, x, perturbed_prototypes, cfg);
    return {r.data().begin(), r.data().end()};
}

// ---------------------------------------------------------------- loss

Node mean_kl(GraphBuilder& g, Node clean, Node clean_log, Node perturbed_log_post) {
    const std::size_t rows = g.shape(clean).at(0);
    if (rows == 0) throw ShapeError("mean_kl: empty batch");
    const Node kl = g.sum(g.mul(clean, g.sub(clean_log, perturbed_log_post)));
    return g.scale(kl, 1.0 / static_cast<double>(rows));
}

namespace {

PerturbedSplit make_split(const SphericalModel& model, const Array& inputs, const Array& features,
                          const Array& perturbed_prototypes, const PerturbConfig& cfg, Array* r_out) {
    PerturbedSplit split;
    Array r = find_perturbation(model, inputs, perturbed_prototypes, cfg);
    split.shifted_inputs = inputs;
    auto sd = split.shifted_inputs.data();
    const auto rd = r.data();
    for (std::size_t i = 0; i < sd.size(); ++i) sd[i] += rd[i];
    split.clean_log = log_posteriors(features, model.prototypes, model.temperature);
    split.clean = split.clean_log;
    for (double& v : split.clean.data()) v = std::exp(v);
    if (r_out != nullptr) *r_out = std::move(r);
    return split;
}

}  // namespace

std::pair<PerturbedSplit, PerturbedSplit> prepare_perturbation(const SphericalModel& model,
                                                               const Array& labeled_inputs,
                                                               const Array& features_labeled,
                                                               const Array& unlabeled_inputs,
                                                               const Array& features_unlabeled,
                                                               const PerturbConfig& cfg) {
    cfg.validate();
    const Array all_features = vstack(features_labeled, features_unlabeled);
    const Array protos = all_features.rows() == 0 ? model.prototypes : perturb_prototypes(model, all_features, cfg);
    return {make_split(model, labeled_inputs, features_labeled, protos, cfg, nullptr),
            make_split(model, unlabeled_inputs, features_unlabeled, protos, cfg, nullptr)};
}

PerturbationOutcome perturbation_loss(const Array& labeled_target, const Array& unlabeled_target,
                                      const SphericalModel& model, const PerturbConfig& cfg) {
    cfg.validate();
    const std::size_t in = model.input_dim();
    const Array xl = labeled_target.empty() ? Array({0, in}) : labeled_target;
    const Array xu = unlabeled_target.empty() ? Array({0, in}) : unlabeled_target;
    const Array fl = extract(model, xl);
    const Array fu = extract(model, xu);

    PerturbationOutcome out;
    const Array all_features = vstack(fl, fu);
    out.perturbed_prototypes =
        all_features.rows() == 0 ? model.prototypes : perturb_prototypes(model, all_features, cfg);

    const PerturbedSplit sl = make_split(model, xl, fl, out.perturbed_prototypes, cfg, &out.r_labeled);
    const PerturbedSplit su = make_split(model, xu, fu, out.perturbed_prototypes, cfg, &out.r_unlabeled);

    GraphBuilder g;
    const auto params = declare_parameters(g, model);
    Bindings b;
    bind_parameters(model, b);
    std::vector<Node> terms;
    std::vector<Node> perturbed_posts;
    auto add_split = [&](const PerturbedSplit& s, const std::string& tag) {
        if (s.shifted_inputs.rows() == 0) return;
        const Node x = g.input("x_" + tag, s.shifted_inputs.shape());
        const Node q = g.input("q_" + tag, s.clean.shape());
        const Node lq = g.input("logq_" + tag, s.clean_log.shape());
        const Node lp =
            log_softmax_rows(g, similarity_logits(g, embed(g, params, model.activation, x), params.prototypes,
                                                  model.temperature));
        terms.push_back(mean_kl(g, q, lq, lp));
        perturbed_posts.push_back(g.exp(lp));
        b.insert_or_assign("x_" + tag, s.shifted_inputs);
        b.insert_or_assign("q_" + tag, s.clean);
        b.insert_or_assign("logq_" + tag, s.clean_log);
    };
    add_split(sl, "t");
    add_split(su, "u");

    out.q_labeled = sl.clean;
    out.q_unlabeled = su.clean;
    out.q_labeled_perturbed = Array(sl.clean.shape());
    out.q_unlabeled_perturbed = Array(su.clean.shape());
    if (terms.empty()) return out;

    Node total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
    const Graph graph = std::move(g).build(total);
    const Tape tape = graph.forward(b);
    out.loss = tape.output().item();

    std::size_t k = 0;
    if (sl.shifted_inputs.rows() != 0) out.q_labeled_perturbed = tape.value(perturbed_posts[k++]);
    if (su.shifted_inputs.rows() != 0) out.q_unlabeled_perturbed = tape.value(perturbed_posts[k++]);
    return out;
}

}  // namespace ape
