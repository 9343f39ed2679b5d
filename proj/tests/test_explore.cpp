#include <doctest.h>

#include <cmath>

#include "ape/explore.hpp"
#include "ape/perturb.hpp"
#include "support.hpp"

using namespace ape;

TEST_CASE("mask thresholds") {
    std::mt19937_64 rng(1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto model = make_model({}, seed);
        const Array f = extract(model, test::gaussian({40, 2}, rng, 2.0));
        const double logK = std::log(3.0);
        for (bool m : alignable_mask(f, model, {logK + 1e-6})) CHECK(m);
        for (bool m : alignable_mask(f, model, {0.0})) CHECK_FALSE(m);

        const auto h = entropies(f, model.prototypes, model.temperature);
        std::vector<double> sorted = h;
        std::sort(sorted.begin(), sorted.end());
        const double mid = 0.5 * (sorted[19] + sorted[20]);
        const auto mask = alignable_mask(f, model, {mid});
        const auto oracle = test::posteriors_ld(f, model.prototypes, model.temperature);
        for (std::size_t i = 0; i < h.size(); ++i) {
            CHECK(mask[i] == (static_cast<double>(test::entropy_ld(oracle[i])) < mid));
        }
    }
}

TEST_CASE("mask is monotone in the threshold") {
    std::mt19937_64 rng(2);
    const auto model = make_model({}, 4);
    const Array f = extract(model, test::gaussian({100, 2}, rng, 2.0));
    std::vector<bool> previous(100, false);
    for (double eps = 0.0; eps <= 1.2; eps += 0.05) {
        const auto mask = alignable_mask(f, model, {eps});
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (previous[i]) CHECK(mask[i]);
        previous = mask;
    }
    CHECK(ExploreConfig::default_for(3).threshold == 0.5 * std::log(3.0));
    CHECK_THROWS_AS(alignable_mask(f, model, {-0.1}), std::invalid_argument);
}

TEST_CASE("pseudo labels") {
    std::mt19937_64 rng(3);
    SUBCASE("feature at a prototype") {
        SphericalModel m = make_model(test::small_spec(3), 1);
        m.prototypes = Array::matrix(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0.1, 0.995});
        normalize_rows(m.prototypes);
        for (std::size_t j = 0; j < 3; ++j) CHECK(pseudo_label(m.prototypes.row_span(j), m) == j);
    }
    SUBCASE("ties go to the lower index") {
        SphericalModel m = make_model(test::small_spec(3), 1);
        m.prototypes = Array::matrix(3, 2, {0, 1, 1, 0, 1, 0});
        const double s = std::sqrt(0.5);
        CHECK(pseudo_label(std::vector<double>{s, s}, m) == 0);
        CHECK(pseudo_label(std::vector<double>{1, 0}, m) == 1);
    }
    SUBCASE("random cases match a similarity scan and ignore T") {
        for (int trial = 0; trial < 200; ++trial) {
            const Array f = test::unit_rows(1, 4, rng);
            SphericalModel m = make_model(test::small_spec(5), static_cast<std::uint64_t>(trial));
            std::size_t best = 0;
            double best_sim = -2.0;
            for (std::size_t k = 0; k < 5; ++k) {
                double s = 0.0;
                for (std::size_t j = 0; j < 4; ++j) s += f.at(0, j) * m.prototypes.at(k, j);
                if (s > best_sim) {
                    best_sim = s;
                    best = k;
                }
            }
            CHECK(pseudo_label(f.row_span(0), m) == best);
            m.temperature = 1.0;
            CHECK(pseudo_label(f.row_span(0), m) == best);
        }
    }
}

TEST_CASE("exploration loss") {
    std::mt19937_64 rng(4);
    SUBCASE("empty mask") {
        const auto model = make_model({}, 1);
        const auto out = exploration_loss(test::gaussian({10, 2}, rng), model, {0.0});
        CHECK(out.loss == 0.0);
        CHECK(out.gated_fraction == 0.0);
        CHECK(exploration_loss(Array({0, 2}), model, {1.0}).loss == 0.0);
    }
    SUBCASE("everything gated is the mean of -log q") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto model = make_model({}, seed);
            const Array x = test::gaussian({12, 2}, rng, 2.0);
            const auto out = exploration_loss(x, model, {10.0});
            const Array f = extract(model, x);
            double s = 0.0;
            for (std::size_t i = 0; i < 12; ++i) {
                const auto q = class_posteriors(f.row_span(i), model);
                s -= std::log(q[pseudo_label(f.row_span(i), model)]);
            }
            CHECK(out.loss == doctest::Approx(s / 12.0).epsilon(1e-12));
            CHECK(out.gated_fraction == 1.0);
            CHECK(out.loss >= 0.0);
        }
    }
    SUBCASE("denominator is the full batch") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto model = make_model({}, seed);
            const Array x = test::gaussian({30, 2}, rng, 2.0);
            const ExploreConfig cfg = ExploreConfig::default_for(3);
            const Array f = extract(model, x);
            const auto mask = alignable_mask(f, model, cfg);
            double s = 0.0;
            std::size_t gated = 0;
            for (std::size_t i = 0; i < 30; ++i) {
                if (!mask[i]) continue;
                const auto q = class_posteriors(f.row_span(i), model);
                s -= std::log(q[pseudo_label(f.row_span(i), model)]);
                ++gated;
            }
            const auto out = exploration_loss(x, model, cfg);
            CHECK(out.loss == doctest::Approx(s / 30.0).epsilon(1e-12));
            CHECK(out.gated_fraction == doctest::Approx(static_cast<double>(gated) / 30.0));
            CHECK(out.loss >= 0.0);
        }
    }
}
