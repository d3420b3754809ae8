#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sam/evaluation.hpp"
#include "sam/geometry.hpp"
#include "sam/training.hpp"

namespace sam::cli {

/// Everything a command can be configured with. A `--config` JSON file sets
/// these first; explicit flags override it.
struct RunConfig {
    TrainConfig train;
    SynthConfig synth;
    std::size_t pairs = 50;
    std::filesystem::path out;
    std::filesystem::path model;
    std::filesystem::path data;
    std::filesystem::path matches;
};

/// Runs `sam <command> [flags]`; returns the process exit code. Errors are
/// reported on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `count` synthetic pairs; pair i uses seed derive_seed(seed, i).
std::vector<FeaturePair> synthesize_pairs(const SynthConfig& config, std::size_t count,
                                          std::uint64_t seed);

/// Pairs listed in `<dir>/manifest.json`, or every `*.json` file of the directory
/// in name order, or the single pair file `path`.
std::vector<FeaturePair> load_pairs(const std::filesystem::path& path);

/// Both images side by side, match lines green (correct) or red, keypoints filled
/// by hard group (empty matrices draw every point grey).
std::string render_svg(const FeaturePair& pair, const MatchSet& matches,
                       const std::vector<bool>& correct, const Matrix& hard_source,
                       const Matrix& hard_target);

}  // namespace sam::cli
