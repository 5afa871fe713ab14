#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hybridlab/config.hpp"

namespace hybridlab {

/// Special-block count for a ratio (special : mamba) at a given depth:
/// round(depth * s / (s + m)), half away from zero.
std::int64_t special_count(std::int64_t depth, std::pair<std::int64_t, std::int64_t> ratio);

/// Indices of k special blocks in a stack of `depth` layers.
std::vector<std::int64_t> place_specials(std::int64_t depth, std::int64_t k, Positioning pos);

/// Ratio form. Throws ContractError on degenerate input (e.g. k = 0 for a
/// nonzero special share).
LayoutSpec plan_layout(std::int64_t depth, std::pair<std::int64_t, std::int64_t> ratio, BlockKind special,
                       Positioning pos);

/// Explicit-count form; depth = n_special + n_mamba.
LayoutSpec plan_layout_counts(std::int64_t n_special, std::int64_t n_mamba, BlockKind special, Positioning pos);

/// Published (N_special, N_mamba) pairs from the ratio ablations and the main
/// comparison, each representable through plan_layout_counts.
std::vector<std::pair<std::int64_t, std::int64_t>> published_count_pairs();

struct LintMessage {
  enum class Level { kInfo, kWarning };
  Level level = Level::kWarning;
  std::string text;
};

std::vector<LintMessage> lint_layout(const LayoutSpec& layout);

inline constexpr std::string_view kLayoutHeader = "# hybridlab-layout-v1";

std::string write_layout(const LayoutSpec& layout);
LayoutSpec read_layout(std::string_view text);
void save_layout(const std::string& path, const LayoutSpec& layout);
LayoutSpec load_layout(const std::string& path);

/// Parses "s:m" (e.g. "1:5").
std::pair<std::int64_t, std::int64_t> parse_ratio(std::string_view s);

}  // namespace hybridlab
