#pragma once

// Model checkpoint file, format version 1. Whitespace-separated text:
//
//   ape-checkpoint 1
//   activation <tanh|relu|linear>
//   temperature <T>
//   layers <L>
//   weight <in> <out>      followed by <in> lines of <out> values
//   bias <out>             followed by one line of <out> values
//   ... (weight/bias repeated per layer)
//   prototypes <K> <d>     followed by <K> lines of <d> values
//   end
//
// Values use the shortest decimal form that round-trips, so
// load(save(m)) == m holds bit for bit.

#include <filesystem>
#include <iosfwd>

#include "ape/sphere.hpp"
#include "ape/text_io.hpp"

namespace ape {

inline constexpr int kCheckpointVersion = 1;

void write_model(std::ostream& out, const SphericalModel& model);
SphericalModel read_model(std::istream& in);

void save_model(const SphericalModel& model, const std::filesystem::path& path);
SphericalModel load_model(const std::filesystem::path& path);

}  // namespace ape
