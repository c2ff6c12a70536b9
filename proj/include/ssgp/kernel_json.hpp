#pragma once

#include <filesystem>

#include <json.hpp>

#include "ssgp/kernels.hpp"

namespace ssgp {

/// Parses a kernel description such as
///   {"type":"matern","nu":1.5,"length":10.0,"variance":2.0}
///   {"type":"product","terms":[...]}
///   {"type":"mean_scaled","beta":5.0,"scale_table":"mu.csv","base":{...}}
/// A mean-scaled "scale_table" is either a CSV path (columns x,value;
/// resolved against `base_dir`) or an inline {"x":[...],"value":[...]}.
/// Throws ConfigError naming the offending field.
KernelExpr kernel_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Inverse of kernel_from_json; scale tables are always written inline.
nlohmann::json kernel_to_json(const KernelExpr& kernel);

}  // namespace ssgp
