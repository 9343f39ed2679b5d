#include "ape/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ape {

std::string_view to_string(Activation a) noexcept {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Linear: return "linear";
    }
    return "?";
}

Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    if (name == "linear") return Activation::Linear;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- model

std::size_t SphericalModel::input_dim() const {
    if (weights.empty()) throw std::logic_error("SphericalModel has no layers");
    return weights.front().rows();
}

std::vector<std::string> SphericalModel::parameter_names() const {
    std::vector<std::string> names;
    names.reserve(2 * weights.size() + 1);
    for (std::size_t l = 0; l < weights.size(); ++l) {
        names.push_back("w" + std::to_string(l));
        names.push_back("b" + std::to_string(l));
    }
    names.emplace_back("prototypes");
    return names;
}

namespace {

template <typename Model>
auto& parameter_ref(Model& m, std::string_view name) {
    if (name == "prototypes") return m.prototypes;
    if (name.size() >= 2 && (name[0] == 'w' || name[0] == 'b')) {
        std::size_t l = 0;
        bool ok = true;
        for (char c : name.substr(1)) {
            if (c < '0' || c > '9') ok = false;
            l = l * 10 + static_cast<std::size_t>(c - '0');
        }
        if (ok && l < m.weights.size()) return name[0] == 'w' ? m.weights[l] : m.biases[l];
    }
    throw std::invalid_argument("unknown model parameter '" + std::string(name) + "'");
}

}  // namespace

const Array& SphericalModel::parameter(std::string_view name) const { return parameter_ref(*this, name); }
Array& SphericalModel::parameter(std::string_view name) { return parameter_ref(*this, name); }

void SphericalModel::validate() const {
    if (weights.empty()) throw std::invalid_argument("model needs at least one layer");
    if (biases.size() != weights.size()) throw std::invalid_argument("model: one bias per layer required");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        const auto& w = weights[l];
        const auto& b = biases[l];
        if (w.rank() != 2 || b.rank() != 2 || b.rows() != 1 || b.cols() != w.cols()) {
            throw std::invalid_argument("model: layer " + std::to_string(l) + " has weight " +
                                        to_string(w.shape()) + " and bias " + to_string(b.shape()));
        }
        if (l > 0 && weights[l - 1].cols() != w.rows()) {
            throw std::invalid_argument("model: layer " + std::to_string(l) + " input width " +
                                        std::to_string(w.rows()) + " does not match previous output " +
                                        std::to_string(weights[l - 1].cols()));
        }
    }
    if (prototypes.rank() != 2 || prototypes.cols() != weights.back().cols() || prototypes.rows() == 0) {
        throw std::invalid_argument("model: prototypes " + to_string(prototypes.shape()) +
                                    " do not match embedding width " + std::to_string(weights.back().cols()));
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("model: temperature must be positive");
}

void normalize_rows(Array& a) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = a.row_span(r);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm)) throw std::domain_error("cannot normalize a non-finite row");
        if (!(norm > 0.0)) throw DegenerateInput("cannot normalize a zero row");
        for (double& v : row) v /= norm;
    }
}

namespace {
// Nonzero biases keep the embedding of an all-zero input off the origin.
constexpr double kBiasInitStd = 0.05;
}  // namespace

SphericalModel make_model(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.input_dim == 0 || spec.embed_dim == 0 || spec.classes == 0) {
        throw std::invalid_argument("model spec: dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::size_t> widths{spec.input_dim};
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(spec.embed_dim);

    SphericalModel m;
    m.temperature = spec.temperature;
    m.activation = spec.activation;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        if (in == 0 || out == 0) throw std::invalid_argument("model spec: zero layer width");
        const double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
        Array w({in, out});
        for (double& v : w.data()) v = stddev * normal(rng);
        Array b({1, out});
        for (double& v : b.data()) v = kBiasInitStd * normal(rng);
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    Array protos({spec.classes, spec.embed_dim});
    for (double& v : protos.data()) v = normal(rng);
    normalize_rows(protos);
    m.prototypes = std::move(protos);
    m.validate();
    return m;
}

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
    const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
    const bool nonneg = std::all_of(probs_.begin(), probs_.end(), [](double p) { return p >= 0.0; });
    if (probs_.empty() || !nonneg || std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("ProbVector: entries must be nonnegative and sum to 1");
    }
}

// ---------------------------------------------------------------- direct evaluation

namespace {

void activate(Array& h, Activation act) {
    switch (act) {
        case Activation::Tanh:
            for (double& v : h.data()) v = std::tanh(v);
            break;
        case Activation::Relu:
            for (double& v : h.data()) v = v < 0.0 ? 0.0 : v;
            break;
        case Activation::Linear: break;
    }
}

// Same accumulation order as the graph's matmul followed by a bias add, so
// both paths agree bit for bit.
Array affine(const Array& x, const Array& w, const Array& b) {
    const std::size_t m = x.rows();
    const std::size_t k = w.rows();
    const std::size_t n = w.cols();
    Array out({m, n});
    const auto bias = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        auto o = out.row_span(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.at(i, p);
            const auto wr = w.row_span(p);
            for (std::size_t j = 0; j < n; ++j) o[j] += xv * wr[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] += bias[j];
    }
    return out;
}

void log_softmax_inplace(std::span<double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    const double lse = std::log(s);
    for (double& v : z) v = (v - mx) - lse;
}

}  // namespace

Array raw_embedding(const SphericalModel& model, const Array& inputs) {
    if (inputs.rank() != 2 || inputs.cols() != model.input_dim()) {
        throw std::invalid_argument("extract: inputs " + to_string(inputs.shape()) + " do not match input width " +
                                    std::to_string(model.input_dim()));
    }
    Array h = inputs;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        h = affine(h, model.weights[l], model.biases[l]);
        if (l + 1 < model.layer_count()) activate(h, model.activation);
    }
    return h;
}

Array extract(const SphericalModel& model, const Array& inputs) {
    Array h = raw_embedding(model, inputs);
    normalize_rows(h);
    return h;
}

std::vector<double> extract(const SphericalModel& model, std::span<const double> input) {
    const Array x({1, input.size()}, std::vector<double>(input.begin(), input.end()));
    const Array f = extract(model, x);
    return {f.data().begin(), f.data().end()};
}

Array similarities(const Array& features, const Array& prototypes) {
    if (features.cols() != prototypes.cols()) {
        throw std::invalid_argument("similarities: feature width " + std::to_string(features.cols()) +
                                    " does not match prototype width " + std::to_string(prototypes.cols()));
    }
    const std::size_t m = features.rows();
    const std::size_t k = prototypes.rows();
    Array out({m, k});
    for (std::size_t i = 0; i < m; ++i) {
        const auto f = features.row_span(i);
        for (std::size_t c = 0; c < k; ++c) {
            const auto p = prototypes.row_span(c);
            double dot = 0.0;
            for (std::size_t j = 0; j < f.size(); ++j) dot += f[j] * p[j];
            out.at(i, c) = dot;
        }
    }
    return out;
}

Array log_posteriors(const Array& features, const Array& prototypes, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    Array z = similarities(features, prototypes);
    const double inv_t = 1.0 / temperature;
    for (double& v : z.data()) v *= inv_t;
    for (std::size_t i = 0; i < z.rows(); ++i) log_softmax_inplace(z.row_span(i));
    return z;
}

ProbVector class_posteriors(std::span<const double> feature, const Array& prototypes, double temperature) {
    double sq = 0.0;
    for (double v : feature) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw std::invalid_argument("class_posteriors: feature is not unit norm");
    }
    const Array f({1, feature.size()}, std::vector<double>(feature.begin(), feature.end()));
    const Array lp = log_posteriors(f, prototypes, temperature);
    std::vector<double> probs(lp.size());
    double total = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        probs[c] = std::exp(lp[c]);
        total += probs[c];
    }
    for (double& p : probs) p /= total;
    return ProbVector(std::move(probs));
}

ProbVector class_posteriors(std::span<const double> feature, const SphericalModel& model) {
    return class_posteriors(feature, model.prototypes, model.temperature);
}

Array one_hot(std::span<const int> labels, std::size_t classes) {
    Array out({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        }
        out.at(i, static_cast<std::size_t>(y)) = 1.0;
    }
    return out;
}

double classification_loss(const SphericalModel& model, const Array& inputs, std::span<const int> labels) {
    if (labels.empty()) throw std::invalid_argument("classification_loss: empty batch");
    if (labels.size() != inputs.rows()) throw std::invalid_argument("classification_loss: label count mismatch");
    const Array targets = one_hot(labels, model.classes());
    const Array lp = log_posteriors(extract(model, inputs), model.prototypes, model.temperature);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) total -= lp.at(i, static_cast<std::size_t>(labels[i]));
    return total / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------- graph assembly

ModelNodes declare_parameters(GraphBuilder& g, const SphericalModel& model) {
    ModelNodes nodes;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        nodes.weights.push_back(g.input("w" + std::to_string(l), model.weights[l].shape()));
        nodes.biases.push_back(g.input("b" + std::to_string(l), model.biases[l].shape()));
    }
    nodes.prototypes = g.input("prototypes", model.prototypes.shape());
    return nodes;
}

void bind_parameters(const SphericalModel& model, Bindings& bindings) {
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        bindings.insert_or_assign("w" + std::to_string(l), model.weights[l]);
        bindings.insert_or_assign("b" + std::to_string(l), model.biases[l]);
    }
    bindings.insert_or_assign("prototypes", model.prototypes);
}

Node raw_embedding(GraphBuilder& g, const ModelNodes& params, Activation act, Node inputs) {
    Node h = inputs;
    const std::size_t rows = g.shape(inputs).at(0);
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        h = g.add(g.matmul(h, params.weights[l]), g.broadcast_rows(params.biases[l], rows));
        if (l + 1 == params.weights.size()) break;
        switch (act) {
            case Activation::Tanh: h = g.tanh(h); break;
            case Activation::Relu: h = g.maximum(h, g.broadcast(g.scalar(0.0), g.shape(h))); break;
            case Activation::Linear: break;
        }
    }
    return h;
}

Node normalize_rows(GraphBuilder& g, Node rows) {
    const Shape s = g.shape(rows);
    const Node norms = g.sqrt(g.sum_axis(g.mul(rows, rows), 1));
    return g.div(rows, g.broadcast_cols(norms, s.at(1)));
}

Node embed(GraphBuilder& g, const ModelNodes& params, Activation act, Node inputs) {
    return normalize_rows(g, raw_embedding(g, params, act, inputs));
}

Node similarity_logits(GraphBuilder& g, Node features, Node prototypes, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    return g.scale(g.matmul(features, g.transpose(prototypes)), 1.0 / temperature);
}

Node log_softmax_rows(GraphBuilder& g, Node logits) {
    const std::size_t k = g.shape(logits).at(1);
    const Node shifted = g.sub(logits, g.broadcast_cols(g.max_axis(logits, 1), k));
    const Node lse = g.log(g.sum_axis(g.exp(shifted), 1));
    return g.sub(shifted, g.broadcast_cols(lse, k));
}

Node cross_entropy(GraphBuilder& g, Node log_post, Node targets) {
    const std::size_t rows = g.shape(log_post).at(0);
    if (rows == 0) throw ShapeError("cross_entropy: empty batch");
    return g.scale(g.sum(g.mul(targets, log_post)), -1.0 / static_cast<double>(rows));
}

LossAndGradient classification_loss_with_gradient(const SphericalModel& model, const Array& inputs,
                                                  std::span<const int> labels) {
    if (labels.empty()) throw std::invalid_argument("classification_loss: empty batch");
    if (labels.size() != inputs.rows()) throw std::invalid_argument("classification_loss: label count mismatch");
    GraphBuilder g;
    const auto params = declare_parameters(g, model);
    const Node x = g.input("x", inputs.shape());
    const Node y = g.input("y", {labels.size(), model.classes()});
    const Node f = embed(g, params, model.activation, x);
    const Node loss = cross_entropy(g, log_softmax_rows(g, similarity_logits(g, f, params.prototypes, model.temperature)), y);
    const Graph graph = std::move(g).build(loss);

    Bindings b;
    bind_parameters(model, b);
    b.insert_or_assign("x", inputs);
    b.insert_or_assign("y", one_hot(labels, model.classes()));
    const Tape tape = graph.forward(b);
    const auto names = model.parameter_names();
    return {tape.output().item(), graph.backward(tape, names)};
}

}  // namespace ape
