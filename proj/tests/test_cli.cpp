#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ape/checkpoint.hpp"
#include "ape/cli.hpp"
#include "support.hpp"

using namespace ape;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome ape_run(std::vector<std::string> args) {
    args.insert(args.begin(), "ape");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<nlohmann::json> records(const fs::path& p) {
    std::vector<nlohmann::json> out;
    for (const auto& line : lines_of(slurp(p))) out.push_back(nlohmann::json::parse(line));
    return out;
}

double printed_accuracy(const std::string& out) {
    const auto at = out.rfind("test_accuracy ");
    REQUIRE(at != std::string::npos);
    return std::stod(out.substr(at + 14));
}

class Scratch {
public:
    Scratch() {
        static int counter = 0;
        dir_ = fs::temp_directory_path() / ("ape_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(dir_);
    }
    ~Scratch() { fs::remove_all(dir_); }
    std::string operator/(const std::string& name) const { return (dir_ / name).string(); }

private:
    fs::path dir_;
};

// A few dozen steps of the default model; enough to move well past chance.
const std::vector<std::string> kShort{"steps=120", "eval_interval=40"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("generate") {
    Scratch tmp;
    const auto r = ape_run({"generate", "--out", tmp / "task.csv"});
    REQUIRE(r.code == 0);
    CHECK(r.out == "source 600\ntarget_labeled 9\ntarget_unlabeled 300\ntarget_test 300\n");
    const auto rows = lines_of(slurp(tmp / "task.csv"));
    CHECK(rows.size() == 2 + 600 + 9 + 300 + 300);
    CHECK(rows[0] == "#format_version=1");
    CHECK(rows[1] == "split,label,x0,x1");

    const auto one = ape_run({"generate", "--out", tmp / "one.csv", "shots=1"});
    REQUIRE(one.code == 0);
    CHECK(one.out.find("target_labeled 3\n") != std::string::npos);

    const auto again = ape_run({"generate", "--out", tmp / "again.csv"});
    CHECK(slurp(tmp / "again.csv") == slurp(tmp / "task.csv"));
    const auto seeded = ape_run({"generate", "--out", tmp / "seeded.csv", "--seed", "3"});
    CHECK(slurp(tmp / "seeded.csv") != slurp(tmp / "task.csv"));
}

TEST_CASE("bad arguments") {
    Scratch tmp;
    const auto unknown = ape_run({"generate", "--out", tmp / "t.csv", "foo=1"});
    CHECK(unknown.code != 0);
    CHECK(unknown.err.find("foo") != std::string::npos);
    CHECK_FALSE(fs::exists(tmp / "t.csv"));

    CHECK(ape_run({"generate", "--out", tmp / "t.csv", "classes=three"}).code != 0);
    CHECK(ape_run({"generate", "--out", tmp / "t.csv", "noequals"}).code != 0);
    CHECK(ape_run({"generate"}).code != 0);
    CHECK(ape_run({}).code != 0);
    CHECK(ape_run({"frobnicate"}).code != 0);
    CHECK(ape_run({"train", "--data", tmp / "missing.csv", "--out", tmp / "run"}).code == 1);
    CHECK(ape_run({"generate", "--config", tmp / "missing.cfg", "--out", tmp / "t.csv"}).code != 0);
}

TEST_CASE("config files") {
    Scratch tmp;
    {
        std::ofstream f(tmp / "run.cfg");
        f << "# a comment\n\n  classes = 4\nshots=2\n   # indented comment\nlearning_rate=0.05\nhidden=16,16\n";
    }
    cli::RunConfig cfg;
    cfg.load(tmp / "run.cfg");
    CHECK(cfg.gen.classes == 4);
    CHECK(cfg.gen.shots == 2);
    CHECK(cfg.train.sgd.learning_rate == 0.05);
    CHECK(cfg.train.hidden == std::vector<std::size_t>{16, 16});

    {
        std::ofstream f(tmp / "bad.cfg");
        f << "classes=3\n# fine\nfoo=2\n";
    }
    try {
        cfg.load(tmp / "bad.cfg");
        FAIL("expected UsageError");
    } catch (const cli::UsageError& e) {
        const std::string what = e.what();
        CHECK(what.find("bad.cfg:3") != std::string::npos);
        CHECK(what.find("foo") != std::string::npos);
    }

    const auto r = ape_run({"generate", "--config", tmp / "run.cfg", "--out", tmp / "t.csv", "shots=1"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("target_labeled 4\n") != std::string::npos);

    cli::RunConfig seeded;
    seeded.apply("seed=11");
    CHECK(seeded.gen.seed == 11);
    CHECK(seeded.train.seed == 11);
    CHECK(cli::known_keys().size() > 20);
    for (const auto& key : {"alpha", "beta", "gamma", "radius", "entropy_threshold", "batch", "steps"}) {
        CHECK(std::find(cli::known_keys().begin(), cli::known_keys().end(), key) != cli::known_keys().end());
    }
}

TEST_CASE("train and eval") {
    Scratch tmp;
    REQUIRE(ape_run({"generate", "--out", tmp / "task.csv"}).code == 0);
    const auto r = ape_run(with({"train", "--data", tmp / "task.csv", "--out", tmp / "run"}, kShort));
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(tmp / "run/model.ckpt"));
    const auto recs = records(tmp / "run/metrics.jsonl");
    REQUIRE(recs.size() == 3);
    CHECK(recs[0]["step"] == 40);
    CHECK(recs.back()["step"] == 120);
    for (const auto& rec : recs) {
        CHECK(rec["format_version"] == 1);
        for (const char* key : {"loss_cls", "loss_a", "loss_p", "loss_e", "total", "test_accuracy",
                                "intra_domain_discrepancy", "gated_fraction"}) {
            CHECK(rec.contains(key));
        }
    }
    const double final_acc = recs.back()["test_accuracy"].get<double>();
    CHECK(final_acc > 1.0 / 3.0);
    CHECK(printed_accuracy(r.out) == doctest::Approx(final_acc).epsilon(1e-4));

    const auto e = ape_run({"eval", "--checkpoint", tmp / "run/model.ckpt", "--data", tmp / "task.csv"});
    REQUIRE(e.code == 0);
    CHECK(std::abs(printed_accuracy(e.out) - final_acc) < 5e-5);

    cli::RunConfig cfg;
    cfg.checkpoint = tmp / "run/model.ckpt";
    cfg.data = tmp / "task.csv";
    std::ostringstream log;
    CHECK(cli::cmd_eval(cfg, log) == final_acc);
}

TEST_CASE("same seed gives byte-identical outputs") {
    Scratch tmp;
    REQUIRE(ape_run({"generate", "--out", tmp / "task.csv"}).code == 0);
    for (const char* dir : {"a", "b"}) {
        REQUIRE(ape_run(with({"train", "--data", tmp / "task.csv", "--out", tmp / dir, "--seed", "7"}, kShort)).code == 0);
    }
    CHECK(slurp(tmp / "a/metrics.jsonl") == slurp(tmp / "b/metrics.jsonl"));
    CHECK(slurp(tmp / "a/model.ckpt") == slurp(tmp / "b/model.ckpt"));
    REQUIRE(ape_run(with({"train", "--data", tmp / "task.csv", "--out", tmp / "c", "--seed", "8"}, kShort)).code == 0);
    CHECK(slurp(tmp / "a/metrics.jsonl") != slurp(tmp / "c/metrics.jsonl"));
}

TEST_CASE("zero weights train on the classification loss alone") {
    Scratch tmp;
    REQUIRE(ape_run({"generate", "--out", tmp / "task.csv"}).code == 0);
    const auto r = ape_run(with({"train", "--data", tmp / "task.csv", "--out", tmp / "run", "alpha=0", "beta=0", "gamma=0"},
                                kShort));
    REQUIRE(r.code == 0);
    for (const auto& rec : records(tmp / "run/metrics.jsonl")) {
        CHECK(rec["total"].get<double>() == rec["loss_cls"].get<double>());
    }
}

TEST_CASE("untrained checkpoints score near chance") {
    Scratch tmp;
    REQUIRE(ape_run({"generate", "--out", tmp / "task.csv"}).code == 0);
    double sum = 0.0;
    const int seeds = 40;
    for (int s = 0; s < seeds; ++s) {
        const auto dir = tmp / ("init" + std::to_string(s));
        REQUIRE(ape_run({"train", "--data", tmp / "task.csv", "--out", dir, "--seed", std::to_string(s), "steps=0"}).code ==
                0);
        const auto e = ape_run({"eval", "--checkpoint", dir + "/model.ckpt", "--data", tmp / "task.csv"});
        REQUIRE(e.code == 0);
        sum += printed_accuracy(e.out);
    }
    CHECK(std::abs(sum / seeds - 1.0 / 3.0) < 0.1);
}

TEST_CASE("eval rejects a mismatched checkpoint") {
    Scratch tmp;
    REQUIRE(ape_run({"generate", "--out", tmp / "three.csv"}).code == 0);
    REQUIRE(ape_run({"generate", "--out", tmp / "four.csv", "classes=4"}).code == 0);
    REQUIRE(ape_run({"generate", "--out", tmp / "wide.csv", "input_dim=3", "translation=1,1,0"}).code == 0);
    REQUIRE(ape_run({"train", "--data", tmp / "three.csv", "--out", tmp / "run", "steps=0"}).code == 0);
    for (const char* data : {"four.csv", "wide.csv"}) {
        const auto e = ape_run({"eval", "--checkpoint", tmp / "run/model.ckpt", "--data", tmp / data});
        CHECK(e.code != 0);
        CHECK(e.err.find("checkpoint") != std::string::npos);
    }
    {
        std::ofstream f(tmp / "junk.ckpt");
        f << "not a checkpoint\n";
    }
    CHECK(ape_run({"eval", "--checkpoint", tmp / "junk.ckpt", "--data", tmp / "three.csv"}).code != 0);
}

TEST_CASE("ablate") {
    Scratch tmp;
    REQUIRE(ape_run({"generate", "--out", tmp / "task.csv"}).code == 0);
    const auto r =
        ape_run({"ablate", "--data", tmp / "task.csv", "--out", tmp / "abl", "n_seeds=2", "steps=30", "--seed", "4"});
    REQUIRE(r.code == 0);
    const auto rows = lines_of(slurp(tmp / "abl/ablation.csv"));
    REQUIRE(rows.size() == 7);
    CHECK(rows[0] == "#format_version=1");
    CHECK(rows[1] == "config,mean_acc,std_acc,seeds");
    const std::vector<std::string> names{"S+T", "+Attract", "+Attract+Explore", "+Perturb", "full"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        CHECK(rows[i + 2].rfind(names[i] + ",", 0) == 0);
        CHECK(rows[i + 2].substr(rows[i + 2].rfind(',') + 1) == "2");
    }

    // The S+T row is the mean of two independent zero-weight runs.
    double sum = 0.0;
    for (int s : {4, 5}) {
        const auto dir = tmp / ("st" + std::to_string(s));
        REQUIRE(ape_run({"train", "--data", tmp / "task.csv", "--out", dir, "--seed", std::to_string(s), "steps=30",
                         "eval_interval=30", "alpha=0", "beta=0", "gamma=0"})
                    .code == 0);
        sum += records(dir + "/metrics.jsonl").back()["test_accuracy"].get<double>();
    }
    std::istringstream row(rows[2]);
    std::string name, mean;
    std::getline(row, name, ',');
    std::getline(row, mean, ',');
    CHECK(std::stod(mean) == sum / 2.0);
}

TEST_CASE("ablation rows") {
    cli::AblationRow row{"x", 0, 0, 0, {0.5, 0.7, 0.9}};
    CHECK(row.mean() == doctest::Approx(0.7));
    CHECK(row.stddev() == doctest::Approx(0.2));
    CHECK(cli::AblationRow{"y", 0, 0, 0, {0.4}}.stddev() == 0.0);

    TrainConfig base;
    base.alpha = 2.0;
    base.beta = 3.0;
    base.gamma = 4.0;
    const auto plan = cli::ablation_plan(base);
    REQUIRE(plan.size() == 5);
    CHECK((plan[0].alpha == 0 && plan[0].beta == 0 && plan[0].gamma == 0));
    CHECK((plan[1].alpha == 2 && plan[1].beta == 0 && plan[1].gamma == 0));
    CHECK((plan[2].alpha == 2 && plan[2].beta == 3 && plan[2].gamma == 0));
    CHECK((plan[3].alpha == 0 && plan[3].beta == 0 && plan[3].gamma == 4));
    CHECK((plan[4].alpha == 2 && plan[4].beta == 3 && plan[4].gamma == 4));
}
