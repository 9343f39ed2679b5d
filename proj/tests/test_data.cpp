#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "ape/data.hpp"
#include "ape/text_io.hpp"
#include "support.hpp"

using namespace ape;

namespace {

bool same_task(const SsdaTask& a, const SsdaTask& b) {
    return a.classes == b.classes && a.input_dim == b.input_dim && test::same_bits(a.source.inputs, b.source.inputs) &&
           a.source.labels == b.source.labels && test::same_bits(a.target_labeled.inputs, b.target_labeled.inputs) &&
           a.target_labeled.labels == b.target_labeled.labels &&
           test::same_bits(a.target_unlabeled.inputs, b.target_unlabeled.inputs) &&
           test::same_bits(a.target_test.inputs, b.target_test.inputs) && a.target_test.labels == b.target_test.labels;
}

SsdaTask parse(const std::string& text) {
    std::istringstream in(text);
    return read_task(in);
}

}  // namespace

TEST_CASE("generate is deterministic") {
    GenConfig cfg;
    cfg.seed = 17;
    CHECK(same_task(generate(cfg), generate(cfg)));
    GenConfig other = cfg;
    other.seed = 18;
    CHECK_FALSE(same_task(generate(cfg), generate(other)));
}

TEST_CASE("split sizes") {
    GenConfig cfg;
    const auto task = generate(cfg);
    CHECK(task.source.size() == 600);
    CHECK(task.target_labeled.size() == 9);
    CHECK(task.target_unlabeled.size() == 300);
    CHECK(task.target_test.size() == 300);
    CHECK(check_task(task) == 3);

    cfg.classes = 4;
    const auto four = generate(cfg);
    CHECK(four.target_labeled.size() == 12);
    for (int k = 0; k < 4; ++k) CHECK(std::count(four.target_labeled.labels.begin(), four.target_labeled.labels.end(), k) == 3);

    cfg.classes = 3;
    cfg.shots = 1;
    CHECK(generate(cfg).target_labeled.size() == 3);
}

TEST_CASE("target splits are disjoint draws") {
    const auto task = generate({});
    std::set<std::pair<double, double>> seen;
    auto add = [&](const Array& x) {
        for (std::size_t i = 0; i < x.rows(); ++i) CHECK(seen.emplace(x.at(i, 0), x.at(i, 1)).second);
    };
    add(task.target_labeled.inputs);
    add(task.target_unlabeled.inputs);
    add(task.target_test.inputs);
}

TEST_CASE("no shift means coinciding class means") {
    GenConfig cfg;
    cfg.rotation_deg = 0.0;
    cfg.translation = {0.0, 0.0};
    cfg.target_scatter = 1.0;
    cfg.source_per_class = 10000;
    cfg.test = 30000;
    cfg.seed = 3;
    const auto task = generate(cfg);
    for (int k = 0; k < 3; ++k) {
        for (std::size_t j = 0; j < 2; ++j) {
            auto mean_of = [&](const LabeledSet& s) {
                double sum = 0.0;
                std::size_t n = 0;
                for (std::size_t i = 0; i < s.size(); ++i) {
                    if (s.labels[i] != k) continue;
                    sum += s.inputs.at(i, j);
                    ++n;
                }
                return std::pair{sum / static_cast<double>(n), n};
            };
            const auto [ms, ns] = mean_of(task.source);
            const auto [mt, nt] = mean_of(task.target_test);
            const double se = cfg.source_std * std::sqrt(1.0 / static_cast<double>(ns) + 1.0 / static_cast<double>(nt));
            CHECK(std::abs(ms - mt) < 3.0 * se);
        }
    }
}

TEST_CASE("generator validation") {
    GenConfig cfg;
    cfg.shots = 0;
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
    cfg = {};
    cfg.target_per_class = 50;
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
    cfg.target_per_class = 203;
    CHECK_NOTHROW(generate(cfg));
    cfg = {};
    cfg.unlabeled = 0;
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}

TEST_CASE("sample_batch") {
    const auto task = generate({});
    std::mt19937_64 rng(5);
    const auto b = sample_batch(task, 8, rng);
    CHECK(b.source.size() == 8);
    CHECK(b.target.size() == 8);
    CHECK(b.unlabeled.rows() == 16);
    for (int y : b.source.labels) CHECK((y >= 0 && y < 3));
    for (int y : b.target.labels) CHECK((y >= 0 && y < 3));

    std::mt19937_64 r1(9), r2(9);
    for (int i = 0; i < 10; ++i) {
        const auto x = sample_batch(task, 5, r1);
        const auto y = sample_batch(task, 5, r2);
        CHECK(test::same_bits(x.source.inputs, y.source.inputs));
        CHECK(test::same_bits(x.target.inputs, y.target.inputs));
        CHECK(test::same_bits(x.unlabeled, y.unlabeled));
        CHECK(x.unlabeled.rows() == 2 * x.source.size());
    }
    CHECK_THROWS_AS(sample_batch(task, 0, rng), std::invalid_argument);
}

TEST_CASE("dataset round trip is exact") {
    GenConfig cfg;
    cfg.input_dim = 4;
    cfg.translation = {1.0, -2.0, 0.5};
    cfg.seed = 99;
    auto task = generate(cfg);
    task.source.inputs.at(0, 0) = -0.0;
    task.source.inputs.at(0, 1) = 5e-324;
    task.source.inputs.at(0, 2) = 0.1 + 0.2;
    std::stringstream ss;
    write_task(ss, task);
    CHECK(same_task(read_task(ss), task));

    const auto path = std::filesystem::temp_directory_path() / "ape_test_roundtrip.csv";
    save_task(task, path);
    CHECK(same_task(load_task(path), task));
    std::filesystem::remove(path);
}

TEST_CASE("hand-written fixture") {
    const auto task = load_task(std::filesystem::path(APE_FIXTURES) / "tiny_task.csv");
    CHECK(task.classes == 2);
    CHECK(task.input_dim == 2);
    CHECK(task.source.inputs == Array::matrix(1, 2, {0.5, -2.0}));
    CHECK(task.source.labels == std::vector<int>{1});
    CHECK(task.target_labeled.inputs == Array::matrix(1, 2, {0.001, 3.25}));
    CHECK(task.target_labeled.labels == std::vector<int>{0});
    CHECK(task.target_unlabeled.inputs == Array::matrix(1, 2, {-0.125, 7.0}));
    CHECK(task.target_test.inputs == Array::matrix(1, 2, {2.0, 0.0}));
    CHECK(task.target_test.labels == std::vector<int>{1});
}

TEST_CASE("reader rejects malformed files") {
    const std::string head = "#format_version=1\nsplit,label,x0,x1\n";
    CHECK_THROWS_AS(parse(head + "source,-1,0,0\n"), FormatError);
    CHECK_THROWS_AS(parse(head + "target_test,-1,0,0\n"), FormatError);
    CHECK_THROWS_AS(parse(head + "target_unlabeled,2,0,0\n"), FormatError);
    CHECK_THROWS_AS(parse(head + "validation,0,0,0\n"), FormatError);
    CHECK_THROWS_AS(parse(head + "source,0,0\n"), FormatError);
    CHECK_THROWS_AS(parse(head + "source,0,abc,0\n"), FormatError);
    CHECK_THROWS_AS(parse("#format_version=2\nsplit,label,x0\n"), FormatError);
    CHECK_THROWS_AS(parse("split,label,x0\nsource,0,1\n"), FormatError);
    CHECK_THROWS_AS(parse("#format_version=1\nsplit,label,y0\n"), FormatError);
    CHECK_THROWS_AS(parse(""), FormatError);
    CHECK_THROWS(load_task("/nonexistent/dir/task.csv"));
}
