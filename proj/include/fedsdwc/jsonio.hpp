#pragma once

#include "fedsdwc/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fedsdwc::jsonio {

using json = nlohmann::json;

// Deterministic JSON emission: keys sorted (nlohmann objects are std::map
// backed, so iteration order is already lexicographic), floats printed with
// 9 significant digits. All artifact files go through this writer so reruns
// are byte-identical.
std::string dump(const json& j, int indent = 2);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

// Row-major little-endian binary blobs used by the dataset and checkpoint
// directory formats.
void write_f32(const std::filesystem::path& path, const Mat& m);
Mat read_f32(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);
void write_i64(const std::filesystem::path& path, const LabelVec& v);
LabelVec read_i64(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace fedsdwc::jsonio
