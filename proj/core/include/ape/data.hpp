#pragma once

// Synthetic two-domain tasks, mini-batch composition and the dataset file.
//
// Dataset file (UTF-8 CSV):
//
//   #format_version=1
//   split,label,x0,...,x{d-1}
//   source,2,0.31,-1.7
//   target_unlabeled,-1,1.2,0.4
//
// split is one of source, target_labeled, target_unlabeled, target_test and
// label is -1 exactly on target_unlabeled rows. The class count is one more
// than the largest label seen.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "ape/array.hpp"

namespace ape {

struct LabeledSet {
    Array inputs;  // (m x d)
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

struct UnlabeledSet {
    Array inputs;  // (m x d)

    std::size_t size() const noexcept { return inputs.rows(); }
    friend bool operator==(const UnlabeledSet&, const UnlabeledSet&) = default;
};

struct SsdaTask {
    LabeledSet source;
    LabeledSet target_labeled;
    UnlabeledSet target_unlabeled;
    LabeledSet target_test;
    std::size_t classes = 0;
    std::size_t input_dim = 0;

    friend bool operator==(const SsdaTask&, const SsdaTask&) = default;
};

/// Shots per class of target_labeled; throws if classes are unevenly covered
/// or some class is missing from the source split.
std::size_t check_task(const SsdaTask& task);

struct GenConfig {
    std::size_t classes = 3;
    std::size_t input_dim = 2;
    std::size_t source_per_class = 200;
    std::size_t shots = 3;
    std::size_t unlabeled = 300;
    std::size_t test = 300;
    /// Target draws available per class; 0 means exactly what the splits need.
    std::size_t target_per_class = 0;

    /// Class means sit on a circle of this radius in the (x0, x1) plane.
    double class_radius = 2.0;
    double source_std = 0.6;
    double rotation_deg = 50.0;
    std::vector<double> translation = {1.5, 0.0};
    /// Target per-class spread relative to source_std.
    double target_scatter = 1.3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Source classes are isotropic Gaussian blobs; the target domain applies the
/// scatter, then the rotation in the (x0, x1) plane, then the translation.
/// Unlabeled and test splits are class-balanced and shuffled.
SsdaTask generate(const GenConfig& cfg);

struct Batch {
    LabeledSet source;
    LabeledSet target;
    Array unlabeled;  // (2 n_l x d)
};

/// Uniform draws with replacement: n_l source, n_l labeled target and 2 n_l
/// unlabeled target rows.
Batch sample_batch(const SsdaTask& task, std::size_t n_l, std::mt19937_64& rng);

inline constexpr int kDatasetVersion = 1;

void write_task(std::ostream& out, const SsdaTask& task);
SsdaTask read_task(std::istream& in);
void save_task(const SsdaTask& task, const std::filesystem::path& path);
SsdaTask load_task(const std::filesystem::path& path);

std::string_view split_name(int split_index);

}  // namespace ape
