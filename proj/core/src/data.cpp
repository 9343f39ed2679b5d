#include "ape/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

#include "ape/text_io.hpp"

namespace ape {

namespace {

constexpr std::string_view kSplitNames[] = {"source", "target_labeled", "target_unlabeled", "target_test"};

std::size_t share(std::size_t total, std::size_t classes, std::size_t k) {
    return total / classes + (k < total % classes ? 1 : 0);
}

}  // namespace

std::string_view split_name(int split_index) { return kSplitNames[split_index]; }

void GenConfig::validate() const {
    if (classes < 2) throw std::invalid_argument("generate: need at least 2 classes");
    if (input_dim < 2) throw std::invalid_argument("generate: input_dim must be >= 2");
    if (source_per_class == 0) throw std::invalid_argument("generate: source_per_class must be positive");
    if (shots == 0) throw std::invalid_argument("generate: shots must be >= 1");
    if (unlabeled == 0 || test == 0) throw std::invalid_argument("generate: unlabeled and test counts must be positive");
    if (translation.size() > input_dim) throw std::invalid_argument("generate: translation longer than input_dim");
    if (!(class_radius >= 0.0) || !(source_std > 0.0) || !(target_scatter >= 0.0)) {
        throw std::invalid_argument("generate: radius, source_std and target_scatter must be nonnegative");
    }
    for (std::size_t k = 0; k < classes; ++k) {
        const std::size_t need = shots + share(unlabeled, classes, k) + share(test, classes, k);
        if (target_per_class != 0 && need > target_per_class) {
            throw std::invalid_argument("generate: shots exceed available target draws (class " + std::to_string(k) +
                                        " needs " + std::to_string(need) + ", pool is " +
                                        std::to_string(target_per_class) + ")");
        }
    }
}

SsdaTask generate(const GenConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = cfg.input_dim;
    const std::size_t K = cfg.classes;

    std::vector<std::vector<double>> means(K, std::vector<double>(d, 0.0));
    for (std::size_t k = 0; k < K; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
        means[k][0] = cfg.class_radius * std::cos(angle);
        means[k][1] = cfg.class_radius * std::sin(angle);
    }
    const double theta = cfg.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta);
    const double s = std::sin(theta);

    auto draw = [&](std::size_t k, double spread) {
        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = means[k][j] + spread * normal(rng);
        return x;
    };
    auto to_target = [&](std::vector<double> x) {
        const double x0 = x[0];
        const double x1 = x[1];
        x[0] = c * x0 - s * x1;
        x[1] = s * x0 + c * x1;
        for (std::size_t j = 0; j < cfg.translation.size(); ++j) x[j] += cfg.translation[j];
        return x;
    };

    SsdaTask task;
    task.classes = K;
    task.input_dim = d;

    std::vector<double> src;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < cfg.source_per_class; ++i) {
            const auto x = draw(k, cfg.source_std);
            src.insert(src.end(), x.begin(), x.end());
            task.source.labels.push_back(static_cast<int>(k));
        }
    }
    task.source.inputs = Array({task.source.labels.size(), d}, std::move(src));

    struct Row {
        std::vector<double> x;
        int label;
    };
    std::vector<Row> labeled;
    std::vector<Row> unlabeled;
    std::vector<Row> test;
    const double target_spread = cfg.source_std * cfg.target_scatter;
    for (std::size_t k = 0; k < K; ++k) {
        const int y = static_cast<int>(k);
        for (std::size_t i = 0; i < cfg.shots; ++i) labeled.push_back({to_target(draw(k, target_spread)), y});
        for (std::size_t i = 0; i < share(cfg.unlabeled, K, k); ++i)
            unlabeled.push_back({to_target(draw(k, target_spread)), y});
        for (std::size_t i = 0; i < share(cfg.test, K, k); ++i) test.push_back({to_target(draw(k, target_spread)), y});
    }
    std::shuffle(unlabeled.begin(), unlabeled.end(), rng);
    std::shuffle(test.begin(), test.end(), rng);

    auto pack = [d](const std::vector<Row>& rows, LabeledSet& out) {
        std::vector<double> values;
        values.reserve(rows.size() * d);
        for (const auto& r : rows) {
            values.insert(values.end(), r.x.begin(), r.x.end());
            out.labels.push_back(r.label);
        }
        out.inputs = Array({rows.size(), d}, std::move(values));
    };
    pack(labeled, task.target_labeled);
    pack(test, task.target_test);
    LabeledSet tmp;
    pack(unlabeled, tmp);
    task.target_unlabeled.inputs = std::move(tmp.inputs);
    return task;
}

std::size_t check_task(const SsdaTask& task) {
    if (task.classes == 0) throw std::invalid_argument("task: no classes");
    std::vector<std::size_t> src(task.classes, 0);
    std::vector<std::size_t> tl(task.classes, 0);
    auto count = [&](const LabeledSet& set, std::vector<std::size_t>& counts, std::string_view name) {
        if (set.inputs.rows() != set.labels.size() || (set.size() != 0 && set.inputs.cols() != task.input_dim)) {
            throw std::invalid_argument("task: split " + std::string(name) + " has inconsistent shape");
        }
        for (int y : set.labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= task.classes) {
                throw std::invalid_argument("task: label " + std::to_string(y) + " out of range in " + std::string(name));
            }
            ++counts[static_cast<std::size_t>(y)];
        }
    };
    std::vector<std::size_t> unused(task.classes, 0);
    count(task.source, src, "source");
    count(task.target_labeled, tl, "target_labeled");
    count(task.target_test, unused, "target_test");
    for (std::size_t k = 0; k < task.classes; ++k) {
        if (src[k] == 0) throw std::invalid_argument("task: class " + std::to_string(k) + " missing from source");
        if (tl[k] != tl[0]) throw std::invalid_argument("task: target_labeled is not balanced across classes");
    }
    return tl[0];
}

Batch sample_batch(const SsdaTask& task, std::size_t n_l, std::mt19937_64& rng) {
    if (n_l == 0) throw std::invalid_argument("sample_batch: n_l must be positive");
    if (task.source.size() == 0 || task.target_labeled.size() == 0 || task.target_unlabeled.size() == 0) {
        throw std::invalid_argument("sample_batch: source, target_labeled and target_unlabeled must be nonempty");
    }
    auto indices = [&](std::size_t population, std::size_t count) {
        std::uniform_int_distribution<std::size_t> pick(0, population - 1);
        std::vector<std::size_t> idx(count);
        for (auto& i : idx) i = pick(rng);
        return idx;
    };
    auto take = [](const LabeledSet& set, const std::vector<std::size_t>& idx) {
        LabeledSet out;
        out.inputs = take_rows(set.inputs, idx);
        out.labels.reserve(idx.size());
        for (auto i : idx) out.labels.push_back(set.labels[i]);
        return out;
    };
    Batch b;
    b.source = take(task.source, indices(task.source.size(), n_l));
    b.target = take(task.target_labeled, indices(task.target_labeled.size(), n_l));
    b.unlabeled = take_rows(task.target_unlabeled.inputs, indices(task.target_unlabeled.size(), 2 * n_l));
    return b;
}

// ---------------------------------------------------------------- file IO

void write_task(std::ostream& out, const SsdaTask& task) {
    out << "#format_version=" << kDatasetVersion << '\n';
    out << "split,label";
    for (std::size_t j = 0; j < task.input_dim; ++j) out << ",x" << j;
    out << '\n';
    auto rows = [&](std::string_view split, const Array& x, const std::vector<int>* labels) {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            out << split << ',' << (labels != nullptr ? (*labels)[i] : -1);
            for (double v : x.row_span(i)) out << ',' << format_double(v);
            out << '\n';
        }
    };
    rows("source", task.source.inputs, &task.source.labels);
    rows("target_labeled", task.target_labeled.inputs, &task.target_labeled.labels);
    rows("target_unlabeled", task.target_unlabeled.inputs, nullptr);
    rows("target_test", task.target_test.inputs, &task.target_test.labels);
}

SsdaTask read_task(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) -> FormatError {
        return FormatError("dataset line " + std::to_string(line_no) + ": " + msg);
    };

    if (!std::getline(in, line)) throw FormatError("dataset: empty file");
    ++line_no;
    const std::string_view version_line = trim(line);
    constexpr std::string_view prefix = "#format_version=";
    if (version_line.substr(0, prefix.size()) != prefix) throw fail("missing '#format_version=' header");
    long long version = 0;
    try {
        version = parse_integer(version_line.substr(prefix.size()), "format version");
    } catch (const std::invalid_argument& e) {
        throw fail(e.what());
    }
    if (version != kDatasetVersion) throw fail("unsupported format version " + std::to_string(version));

    if (!std::getline(in, line)) throw fail("missing column header");
    ++line_no;
    const auto header = split(trim(line), ',');
    if (header.size() < 3 || header[0] != "split" || header[1] != "label") {
        throw fail("header must start with 'split,label,x0'");
    }
    const std::size_t d = header.size() - 2;
    for (std::size_t j = 0; j < d; ++j) {
        if (header[j + 2] != "x" + std::to_string(j)) throw fail("expected column 'x" + std::to_string(j) + "'");
    }

    std::vector<double> values[4];
    std::vector<int> labels[4];
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto fields = split(text, ',');
        if (fields.size() != d + 2) {
            throw fail("expected " + std::to_string(d + 2) + " columns, got " + std::to_string(fields.size()));
        }
        int split_index = -1;
        for (int s = 0; s < 4; ++s) {
            if (fields[0] == kSplitNames[s]) split_index = s;
        }
        if (split_index < 0) throw fail("unknown split tag '" + std::string(fields[0]) + "'");
        int label = 0;
        try {
            label = static_cast<int>(parse_integer(fields[1], "label"));
        } catch (const std::invalid_argument& e) {
            throw fail(e.what());
        }
        const bool unlabeled = split_index == 2;
        if (unlabeled && label != -1) throw fail("target_unlabeled rows must have label -1");
        if (!unlabeled && label < 0) throw fail("labeled split '" + std::string(fields[0]) + "' has label " +
                                                std::to_string(label));
        max_label = std::max(max_label, label);
        labels[split_index].push_back(label);
        for (std::size_t j = 0; j < d; ++j) {
            try {
                values[split_index].push_back(parse_double(fields[j + 2], "x" + std::to_string(j)));
            } catch (const std::invalid_argument& e) {
                throw fail(e.what());
            }
        }
    }

    SsdaTask task;
    task.input_dim = d;
    task.classes = static_cast<std::size_t>(max_label + 1);
    auto make = [&](int s) {
        const std::size_t rows = labels[s].size();
        try {
            return Array({rows, d}, std::move(values[s]));
        } catch (const std::domain_error& e) {
            throw FormatError(std::string("dataset: ") + e.what());
        }
    };
    task.source = {make(0), std::move(labels[0])};
    task.target_labeled = {make(1), std::move(labels[1])};
    task.target_unlabeled = {make(2)};
    task.target_test = {make(3), std::move(labels[3])};
    return task;
}

void save_task(const SsdaTask& task, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    write_task(out, task);
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

SsdaTask load_task(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
    return read_task(in);
}

}  // namespace ape
