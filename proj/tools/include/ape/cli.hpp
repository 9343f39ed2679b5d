#pragma once

// Command layer behind the `ape` executable. Each command takes a resolved
// RunConfig so tests can drive it without a process boundary.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ape/data.hpp"
#include "ape/trainer.hpp"

namespace ape::cli {

/// Bad configuration key or value, or a missing required path.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    GenConfig gen;
    TrainConfig train;
    std::size_t n_seeds = 10;
    std::size_t jobs = 1;  // concurrent ablation runs

    std::filesystem::path data;
    std::filesystem::path out;
    std::filesystem::path checkpoint;

    /// `seed` sets both the generator and the training seed.
    void set(std::string_view key, std::string_view value);
    /// One "key=value" token.
    void apply(std::string_view assignment);
    /// Lines of key=value; blank lines and '#' comments are skipped.
    void read(std::istream& in, std::string_view source_name);
    void load(const std::filesystem::path& path);
};

/// Every key accepted by RunConfig::set, in file order.
const std::vector<std::string>& known_keys();

void cmd_generate(const RunConfig& cfg, std::ostream& log);
TrainResult cmd_train(const RunConfig& cfg, std::ostream& log);
double cmd_eval(const RunConfig& cfg, std::ostream& log);

struct AblationRow {
    std::string config;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    std::vector<double> accuracies;  // one per seed, in seed order
    double mean() const;
    /// Sample standard deviation; 0 for a single seed.
    double stddev() const;
};

inline constexpr int kAblationVersion = 1;

/// The five ablation rows for the configured loss weights.
std::vector<AblationRow> ablation_plan(const TrainConfig& base);
/// Runs every row over seeds seed, seed+1, ..., seed+n_seeds-1.
std::vector<AblationRow> run_ablation(const SsdaTask& task, const RunConfig& cfg);
void write_ablation(std::ostream& out, const std::vector<AblationRow>& rows);
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log);

/// Full command line: `ape <command> [--config F] [--data F] [--out P]
/// [--checkpoint F] [--seed N] [key=value ...]`. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ape::cli
