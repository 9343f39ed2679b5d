#include "ape/cli.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include <CLI11.hpp>

#include "ape/checkpoint.hpp"
#include "ape/text_io.hpp"

namespace ape::cli {

namespace {

using Setter = std::function<void(RunConfig&, std::string_view)>;

std::size_t to_count(std::string_view text, std::string_view key) {
    const long long v = parse_integer(text, key);
    if (v < 0) throw UsageError(std::string(key) + " must be nonnegative");
    return static_cast<std::size_t>(v);
}

std::vector<double> to_doubles(std::string_view text, std::string_view key) {
    std::vector<double> out;
    if (trim(text).empty()) return out;
    for (auto field : split(text, ',')) out.push_back(parse_double(trim(field), key));
    return out;
}

std::vector<std::size_t> to_counts(std::string_view text, std::string_view key) {
    std::vector<std::size_t> out;
    if (trim(text).empty()) return out;
    for (auto field : split(text, ',')) out.push_back(to_count(trim(field), key));
    return out;
}

template <class T>
Setter count_field(T RunConfig::*group, std::size_t T::*field) {
    return [=](RunConfig& c, std::string_view v) { (c.*group).*field = to_count(v, "value"); };
}

template <class T>
Setter double_field(T RunConfig::*group, double T::*field) {
    return [=](RunConfig& c, std::string_view v) { (c.*group).*field = parse_double(v, "value"); };
}

const std::vector<std::pair<std::string, Setter>>& setters() {
    static const std::vector<std::pair<std::string, Setter>> table = [] {
        std::vector<std::pair<std::string, Setter>> t;
        // generator
        t.emplace_back("classes", count_field(&RunConfig::gen, &GenConfig::classes));
        t.emplace_back("input_dim", count_field(&RunConfig::gen, &GenConfig::input_dim));
        t.emplace_back("source_per_class", count_field(&RunConfig::gen, &GenConfig::source_per_class));
        t.emplace_back("shots", count_field(&RunConfig::gen, &GenConfig::shots));
        t.emplace_back("unlabeled", count_field(&RunConfig::gen, &GenConfig::unlabeled));
        t.emplace_back("test", count_field(&RunConfig::gen, &GenConfig::test));
        t.emplace_back("target_per_class", count_field(&RunConfig::gen, &GenConfig::target_per_class));
        t.emplace_back("class_radius", double_field(&RunConfig::gen, &GenConfig::class_radius));
        t.emplace_back("source_std", double_field(&RunConfig::gen, &GenConfig::source_std));
        t.emplace_back("rotation_deg", double_field(&RunConfig::gen, &GenConfig::rotation_deg));
        t.emplace_back("translation",
                       [](RunConfig& c, std::string_view v) { c.gen.translation = to_doubles(v, "translation"); });
        t.emplace_back("target_scatter", double_field(&RunConfig::gen, &GenConfig::target_scatter));
        t.emplace_back("seed", [](RunConfig& c, std::string_view v) {
            const auto s = static_cast<std::uint64_t>(to_count(v, "seed"));
            c.gen.seed = s;
            c.train.seed = s;
        });
        // objective and optimizer
        t.emplace_back("alpha", double_field(&RunConfig::train, &TrainConfig::alpha));
        t.emplace_back("beta", double_field(&RunConfig::train, &TrainConfig::beta));
        t.emplace_back("gamma", double_field(&RunConfig::train, &TrainConfig::gamma));
        t.emplace_back("learning_rate",
                       [](RunConfig& c, std::string_view v) { c.train.sgd.learning_rate = parse_double(v, "learning_rate"); });
        t.emplace_back("momentum",
                       [](RunConfig& c, std::string_view v) { c.train.sgd.momentum = parse_double(v, "momentum"); });
        t.emplace_back("weight_decay",
                       [](RunConfig& c, std::string_view v) { c.train.sgd.weight_decay = parse_double(v, "weight_decay"); });
        t.emplace_back("steps", count_field(&RunConfig::train, &TrainConfig::steps));
        t.emplace_back("eval_interval", count_field(&RunConfig::train, &TrainConfig::eval_interval));
        t.emplace_back("batch", count_field(&RunConfig::train, &TrainConfig::batch));
        // model
        t.emplace_back("hidden", [](RunConfig& c, std::string_view v) { c.train.hidden = to_counts(v, "hidden"); });
        t.emplace_back("embed_dim", count_field(&RunConfig::train, &TrainConfig::embed_dim));
        t.emplace_back("activation",
                       [](RunConfig& c, std::string_view v) { c.train.activation = parse_activation(v); });
        t.emplace_back("temperature", double_field(&RunConfig::train, &TrainConfig::temperature));
        // perturbation, exploration, attraction
        t.emplace_back("radius",
                       [](RunConfig& c, std::string_view v) { c.train.perturb.radius = parse_double(v, "radius"); });
        t.emplace_back("prototype_step", [](RunConfig& c, std::string_view v) {
            c.train.perturb.prototype_step = parse_double(v, "prototype_step");
        });
        t.emplace_back("search_steps", [](RunConfig& c, std::string_view v) {
            c.train.perturb.search_steps = to_count(v, "search_steps");
        });
        t.emplace_back("search_step_size", [](RunConfig& c, std::string_view v) {
            c.train.perturb.search_step_size = parse_double(v, "search_step_size");
        });
        t.emplace_back("entropy_threshold", [](RunConfig& c, std::string_view v) {
            c.train.entropy_threshold = parse_double(v, "entropy_threshold");
        });
        t.emplace_back("kernel_widths",
                       [](RunConfig& c, std::string_view v) { c.train.kernel_widths = to_doubles(v, "kernel_widths"); });
        // runs and paths
        t.emplace_back("n_seeds", [](RunConfig& c, std::string_view v) { c.n_seeds = to_count(v, "n_seeds"); });
        t.emplace_back("jobs", [](RunConfig& c, std::string_view v) { c.jobs = to_count(v, "jobs"); });
        t.emplace_back("data", [](RunConfig& c, std::string_view v) { c.data = std::string(v); });
        t.emplace_back("out", [](RunConfig& c, std::string_view v) { c.out = std::string(v); });
        t.emplace_back("checkpoint", [](RunConfig& c, std::string_view v) { c.checkpoint = std::string(v); });
        return t;
    }();
    return table;
}

void require(const std::filesystem::path& p, const char* flag) {
    if (p.empty()) throw UsageError(std::string("missing ") + flag);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

std::string fixed4(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 4);
    return std::string(buf, res.ptr);
}

}  // namespace

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
    for (const auto& [name, setter] : setters()) {
        if (name != key) continue;
        try {
            setter(*this, trim(value));
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception& e) {
            throw UsageError("bad value for '" + name + "': " + e.what());
        }
        return;
    }
    throw UsageError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw UsageError("expected key=value, got '" + std::string(assignment) + "'");
    }
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::read(std::istream& in, std::string_view source_name) {
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        auto text = trim(line);
        if (text.empty() || text.front() == '#') continue;
        try {
            apply(text);
        } catch (const UsageError& e) {
            throw UsageError(std::string(source_name) + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

void RunConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read config " + path.string());
    read(f, path.string());
}

// ---------------------------------------------------------------- commands

void cmd_generate(const RunConfig& cfg, std::ostream& log) {
    require(cfg.out, "--out");
    const SsdaTask task = generate(cfg.gen);
    save_task(task, cfg.out);
    log << "source " << task.source.size() << '\n'
        << "target_labeled " << task.target_labeled.size() << '\n'
        << "target_unlabeled " << task.target_unlabeled.size() << '\n'
        << "target_test " << task.target_test.size() << '\n';
}

TrainResult cmd_train(const RunConfig& cfg, std::ostream& log) {
    require(cfg.data, "--data");
    require(cfg.out, "--out");
    const SsdaTask task = load_task(cfg.data);
    TrainResult result = train(task, cfg.train);

    std::filesystem::create_directories(cfg.out);
    save_model(result.model, cfg.out / "model.ckpt");
    auto metrics = open_out(cfg.out / "metrics.jsonl");
    write_metrics(metrics, result.metrics);
    if (!metrics.flush()) throw std::runtime_error("cannot write metrics");

    if (!result.metrics.empty()) log << "test_accuracy " << fixed4(result.metrics.back().test_accuracy) << '\n';
    return result;
}

double cmd_eval(const RunConfig& cfg, std::ostream& log) {
    require(cfg.checkpoint, "--checkpoint");
    require(cfg.data, "--data");
    const SphericalModel model = load_model(cfg.checkpoint);
    const SsdaTask task = load_task(cfg.data);
    if (model.input_dim() != task.input_dim || model.classes() != task.classes) {
        throw std::invalid_argument("checkpoint expects input_dim " + std::to_string(model.input_dim()) + " and " +
                                    std::to_string(model.classes()) + " classes, dataset has input_dim " +
                                    std::to_string(task.input_dim) + " and " + std::to_string(task.classes));
    }
    const double acc = evaluate(model, task.target_test);
    log << "test_accuracy " << fixed4(acc) << '\n';
    return acc;
}

double AblationRow::mean() const {
    if (accuracies.empty()) return 0.0;
    return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double AblationRow::stddev() const {
    if (accuracies.size() < 2) return 0.0;
    const double m = mean();
    double ss = 0.0;
    for (double a : accuracies) ss += (a - m) * (a - m);
    return std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
}

std::vector<AblationRow> ablation_plan(const TrainConfig& base) {
    const double a = base.alpha, b = base.beta, g = base.gamma;
    return {
        {"S+T", 0.0, 0.0, 0.0, {}},
        {"+Attract", a, 0.0, 0.0, {}},
        {"+Attract+Explore", a, b, 0.0, {}},
        {"+Perturb", 0.0, 0.0, g, {}},
        {"full", a, b, g, {}},
    };
}

std::vector<AblationRow> run_ablation(const SsdaTask& task, const RunConfig& cfg) {
    if (cfg.n_seeds == 0) throw UsageError("n_seeds must be positive");
    auto rows = ablation_plan(cfg.train);
    for (auto& row : rows) row.accuracies.assign(cfg.n_seeds, 0.0);

    const std::size_t total = rows.size() * cfg.n_seeds;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t job = next++; job < total; job = next++) {
            AblationRow& row = rows[job / cfg.n_seeds];
            const std::size_t s = job % cfg.n_seeds;
            TrainConfig tc = cfg.train;
            tc.alpha = row.alpha;
            tc.beta = row.beta;
            tc.gamma = row.gamma;
            tc.seed = cfg.train.seed + s;
            tc.eval_interval = tc.steps == 0 ? 1 : tc.steps;
            try {
                const auto result = train(task, tc);
                row.accuracies[s] = result.metrics.empty() ? evaluate(result.model, task.target_test)
                                                           : result.metrics.back().test_accuracy;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = total;
            }
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.jobs, total));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return rows;
}

void write_ablation(std::ostream& out, const std::vector<AblationRow>& rows) {
    out << "#format_version=" << kAblationVersion << '\n';
    out << "config,mean_acc,std_acc,seeds\n";
    for (const auto& r : rows) {
        out << r.config << ',' << format_double(r.mean()) << ',' << format_double(r.stddev()) << ','
            << r.accuracies.size() << '\n';
    }
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log) {
    require(cfg.data, "--data");
    require(cfg.out, "--out");
    const SsdaTask task = load_task(cfg.data);
    auto rows = run_ablation(task, cfg);

    std::filesystem::create_directories(cfg.out);
    auto f = open_out(cfg.out / "ablation.csv");
    write_ablation(f, rows);
    if (!f.flush()) throw std::runtime_error("cannot write ablation table");

    for (const auto& r : rows) {
        log << r.config << ' ' << fixed4(r.mean()) << " +- " << fixed4(r.stddev()) << '\n';
    }
    return rows;
}

// ---------------------------------------------------------------- entry

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-supervised domain adaptation on a spherical feature space"};
    app.require_subcommand(1);

    std::string config_path, data, out_path, checkpoint;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value configuration file");
        sub->add_option("--seed", seed, "generator and training seed");
        sub->add_option("overrides", overrides, "key=value overrides");
    };

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    add_common(gen);
    gen->add_option("--out", out_path, "dataset file")->required();

    auto* trn = app.add_subcommand("train", "train and write model.ckpt and metrics.jsonl");
    add_common(trn);
    trn->add_option("--data", data, "dataset file")->required();
    trn->add_option("--out", out_path, "output directory")->required();

    auto* evl = app.add_subcommand("eval", "print target test accuracy of a checkpoint");
    add_common(evl);
    evl->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    evl->add_option("--data", data, "dataset file")->required();

    auto* abl = app.add_subcommand("ablate", "run the five-row ablation and write ablation.csv");
    add_common(abl);
    abl->add_option("--data", data, "dataset file")->required();
    abl->add_option("--out", out_path, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load(config_path);
        for (const auto& o : overrides) cfg.apply(o);
        if (seed) {
            cfg.gen.seed = *seed;
            cfg.train.seed = *seed;
        }
        if (!data.empty()) cfg.data = data;
        if (!out_path.empty()) cfg.out = out_path;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;

        if (gen->parsed()) cmd_generate(cfg, out);
        if (trn->parsed()) cmd_train(cfg, out);
        if (evl->parsed()) cmd_eval(cfg, out);
        if (abl->parsed()) cmd_ablate(cfg, out);
    } catch (const UsageError& e) {
        err << "ape: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "ape: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace ape::cli
