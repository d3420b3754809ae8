#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "sam/geometry.hpp"

namespace sam {

/// Decimal with 17 significant digits (round-trips every float64).
std::string format_double(double v);

/// Pair file: {"image_size":[w,h], "source":{"keypoints":[[x,y,conf]...],
/// "descriptors":[[...]...]}, "target":{...}, "homography":[[...]x3], "seed":n}.
std::string pair_to_json(const FeaturePair& pair);
FeaturePair pair_from_json(std::string_view text);

void save_pair(const std::filesystem::path& path, const FeaturePair& pair);
FeaturePair load_pair(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace sam
