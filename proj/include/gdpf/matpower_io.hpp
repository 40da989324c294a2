// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "gdpf/grid.hpp"

namespace gdpf {

/// Base voltage substituted for buses whose case file leaves baseKV at 0.
inline constexpr double kDefaultBaseKv = 138.0;

/// Parses the Matpower case-file subset: the scalar `baseMVA` plus the
/// numeric `bus`, `gen` and `branch` matrices. Other assignments (gencost,
/// cell arrays, function boilerplate) are skipped. Extra trailing columns
/// are ignored; tap ratios of 0 become 1.0.
Grid parse_case(std::string_view text);

Grid load_case(const std::filesystem::path& path);

/// Writes a case file that parse_case reads back field-for-field
/// (values printed with 9 significant digits).
std::string serialize_case(const Grid& grid);

}  // namespace gdpf
