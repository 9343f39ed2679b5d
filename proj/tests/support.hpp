#pragma once

// Shared helpers and independent oracles for the test binaries.

#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ape/array.hpp"
#include "ape/graph.hpp"
#include "ape/sphere.hpp"

namespace test {

inline ape::Array gaussian(ape::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    ape::Array a(std::move(shape));
    for (double& v : a.data()) v = n(rng);
    return a;
}

inline ape::Array uniform(ape::Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    ape::Array a(std::move(shape));
    for (double& v : a.data()) v = u(rng);
    return a;
}

inline ape::Array unit_rows(std::size_t m, std::size_t d, std::mt19937_64& rng) {
    ape::Array a = gaussian({m, d}, rng);
    ape::normalize_rows(a);
    return a;
}

inline bool same_bits(const ape::Array& a, const ape::Array& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

inline bool same_bits(const ape::SphericalModel& a, const ape::SphericalModel& b) {
    if (a.parameter_names() != b.parameter_names()) return false;
    if (a.activation != b.activation || std::memcmp(&a.temperature, &b.temperature, sizeof(double)) != 0) return false;
    for (const auto& name : a.parameter_names()) {
        if (!same_bits(a.parameter(name), b.parameter(name))) return false;
    }
    return true;
}

/// |a - b| / max(|a|, |b|) over whole tensors; differences below `floor`
/// in norm count as agreement.
inline double relative_error(const ape::Array& a, const ape::Array& b, double floor = 1e-6) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Central differences of f with respect to every entry of x.
inline ape::Array central_difference(const std::function<double(const ape::Array&)>& f, ape::Array x,
                                     double h = 1e-5) {
    ape::Array grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Central differences of f with respect to every model parameter.
inline ape::Gradients model_difference(const ape::SphericalModel& model,
                                       const std::function<double(const ape::SphericalModel&)>& f,
                                       double h = 1e-5) {
    ape::Gradients out;
    ape::SphericalModel m = model;
    for (const auto& name : model.parameter_names()) {
        out[name] = central_difference(
            [&](const ape::Array& p) {
                m.parameter(name) = p;
                const double v = f(m);
                m.parameter(name) = model.parameter(name);
                return v;
            },
            model.parameter(name), h);
    }
    return out;
}

/// Largest per-parameter relative error between two gradient maps.
inline double worst_error(const ape::Gradients& analytic, const ape::Gradients& numeric) {
    double worst = 0.0;
    for (const auto& [name, g] : numeric) worst = std::max(worst, relative_error(analytic.at(name), g));
    return worst;
}

inline ape::ModelSpec small_spec(std::size_t classes = 3, std::size_t input_dim = 2) {
    ape::ModelSpec s;
    s.input_dim = input_dim;
    s.hidden = {8, 8};
    s.embed_dim = 4;
    s.classes = classes;
    return s;
}

/// Softmax of similarities / T in long double.
inline std::vector<long double> softmax_ld(const std::vector<double>& sims, double temperature) {
    long double mx = -INFINITY;
    for (double s : sims) mx = std::max(mx, static_cast<long double>(s) / temperature);
    std::vector<long double> e(sims.size());
    long double z = 0.0L;
    for (std::size_t i = 0; i < sims.size(); ++i) {
        e[i] = std::exp(static_cast<long double>(sims[i]) / temperature - mx);
        z += e[i];
    }
    for (auto& v : e) v /= z;
    return e;
}

/// Posterior of each row by explicit dot products and the long double softmax.
inline std::vector<std::vector<long double>> posteriors_ld(const ape::Array& features, const ape::Array& protos,
                                                           double temperature) {
    std::vector<std::vector<long double>> out;
    for (std::size_t i = 0; i < features.rows(); ++i) {
        std::vector<double> sims(protos.rows());
        for (std::size_t k = 0; k < protos.rows(); ++k) {
            long double s = 0.0L;
            for (std::size_t j = 0; j < features.cols(); ++j)
                s += static_cast<long double>(features.at(i, j)) * protos.at(k, j);
            sims[k] = static_cast<double>(s);
        }
        out.push_back(softmax_ld(sims, temperature));
    }
    return out;
}

inline long double entropy_ld(const std::vector<long double>& q) {
    long double h = 0.0L;
    for (auto v : q)
        if (v > 0.0L) h -= v * std::log(v);
    return h;
}

/// Biased squared MMD by explicit double loops over every pair.
inline long double mmd_brute(const ape::Array& a, const ape::Array& b, const std::vector<double>& widths) {
    auto k = [&](const ape::Array& x, std::size_t i, const ape::Array& y, std::size_t j) {
        long double d2 = 0.0L;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const long double diff = static_cast<long double>(x.at(i, c)) - y.at(j, c);
            d2 += diff * diff;
        }
        long double s = 0.0L;
        for (double w : widths) s += std::exp(-d2 / (2.0L * w * w));
        return s / static_cast<long double>(widths.size());
    };
    auto mean = [&](const ape::Array& x, const ape::Array& y) {
        long double s = 0.0L;
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < y.rows(); ++j) s += k(x, i, y, j);
        return s / static_cast<long double>(x.rows() * y.rows());
    };
    return mean(a, a) + mean(b, b) - 2.0L * mean(a, b);
}

/// KL(q || r) summed over classes.
inline long double kl_ld(const std::vector<long double>& q, const std::vector<long double>& r) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < q.size(); ++i)
        if (q[i] > 0.0L) s += q[i] * (std::log(q[i]) - std::log(r[i]));
    return s;
}

}  // namespace test
