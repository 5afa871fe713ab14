#include "hybridlab/layout.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hybridlab {

namespace {

std::vector<std::int64_t> scatter(std::int64_t depth, std::int64_t k, std::int64_t offset) {
  std::vector<std::int64_t> out;
  for (std::int64_t j = 0; j < k; ++j) out.push_back(offset + (j + 1) * (depth + 1) / (k + 1) - 1);
  return out;
}

std::int64_t to_int(std::string_view s, std::string_view what) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ContractError(std::string(what) + ": not an integer: '" + std::string(s) + "'");
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::int64_t special_count(std::int64_t depth, std::pair<std::int64_t, std::int64_t> ratio) {
  const auto [s, m] = ratio;
  if (depth < 1) throw ContractError("plan_layout: depth must be >= 1");
  if (s < 0 || m < 0 || s + m == 0) throw ContractError("plan_layout: ratio components must be >= 0 and not both 0");
  return static_cast<std::int64_t>(std::llround(static_cast<double>(depth) * static_cast<double>(s) /
                                                static_cast<double>(s + m)));
}

std::vector<std::int64_t> place_specials(std::int64_t depth, std::int64_t k, Positioning pos) {
  if (depth < 1 || k < 0 || k > depth) throw ContractError("place_specials: need 0 <= k <= depth");
  if (k == 0) return {};
  if (k == depth) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(depth));
    for (std::int64_t i = 0; i < depth; ++i) all[i] = i;
    return all;
  }
  std::vector<std::int64_t> idx;
  switch (pos) {
    case Positioning::kScatter:
      idx = scatter(depth, k, 0);
      break;
    case Positioning::kMiddle:
      idx = k == 1 ? std::vector<std::int64_t>{depth / 2} : scatter(depth, k, 0);
      break;
    case Positioning::kFront:
      idx = scatter(depth, k, 0);
      idx.front() = 0;
      break;
    case Positioning::kEnd:
      idx = scatter(depth, k, 0);
      idx.back() = depth - 1;
      break;
    case Positioning::kCluster: {
      const std::int64_t start = (depth - k) / 2;
      for (std::int64_t j = 0; j < k; ++j) idx.push_back(start + j);
      break;
    }
    case Positioning::kSandwich:
      idx.push_back(0);
      if (k >= 2) {
        for (std::int64_t i : scatter(depth - 2, k - 2, 1)) idx.push_back(i);
        idx.push_back(depth - 1);
      }
      break;
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

LayoutSpec plan_layout_counts(std::int64_t n_special, std::int64_t n_mamba, BlockKind special, Positioning pos) {
  if (n_special < 0 || n_mamba < 0 || n_special + n_mamba == 0) {
    throw ContractError("plan_layout: counts must be >= 0 and not both 0");
  }
  if (special == BlockKind::kMamba) throw ContractError("plan_layout: special kind cannot be mamba");
  const std::int64_t depth = n_special + n_mamba;
  LayoutSpec l;
  l.special = special;
  l.n_special = n_special;
  l.n_mamba = n_mamba;
  l.positioning = pos;
  l.blocks.assign(static_cast<std::size_t>(depth), BlockSpec{BlockKind::kMamba});
  for (std::int64_t i : place_specials(depth, n_special, pos)) l.blocks[i].kind = special;
  return l;
}

LayoutSpec plan_layout(std::int64_t depth, std::pair<std::int64_t, std::int64_t> ratio, BlockKind special,
                       Positioning pos) {
  const std::int64_t k = special_count(depth, ratio);
  if (k == 0 && ratio.first > 0) {
    throw ContractError("plan_layout: ratio " + std::to_string(ratio.first) + ":" + std::to_string(ratio.second) +
                        " at depth " + std::to_string(depth) + " yields no special block (degenerate)");
  }
  if (k == depth && ratio.second > 0) {
    throw ContractError("plan_layout: ratio " + std::to_string(ratio.first) + ":" + std::to_string(ratio.second) +
                        " at depth " + std::to_string(depth) + " yields no mamba block (degenerate)");
  }
  return plan_layout_counts(k, depth - k, special, pos);
}

std::vector<std::pair<std::int64_t, std::int64_t>> published_count_pairs() {
  return {{16, 0}, {0, 13}, {7, 7}, {3, 10}, {2, 11}, {1, 12},
          {14, 0}, {0, 11}, {6, 6}, {3, 8},  {2, 9},  {1, 10}};
}

std::vector<LintMessage> lint_layout(const LayoutSpec& layout) {
  std::vector<LintMessage> out;
  const auto idx = layout.special_indices();
  const std::int64_t depth = layout.depth();
  const auto k = static_cast<std::int64_t>(idx.size());
  if (k == 0 || k == depth) return out;
  if (idx.front() == 0) {
    out.push_back({LintMessage::Level::kWarning,
                   "front placement degrades quality: special block at index 0; move it toward the middle"});
  }
  const bool both_ends = k >= 2 && idx.front() == 0 && idx.back() == depth - 1;
  if (layout.positioning == Positioning::kSandwich || both_ends) {
    out.push_back({LintMessage::Level::kWarning,
                   "sandwich placement (special blocks at both ends) degrades quality; prefer scatter"});
  }
  if (2 * k > depth) {
    out.push_back({LintMessage::Level::kInfo,
                   "special share " + std::to_string(k) + "/" + std::to_string(depth) +
                       " exceeds 1:1; compute and cache cost grow with little quality gain (1:5 balances both)"});
  }
  return out;
}

std::string write_layout(const LayoutSpec& layout) {
  std::ostringstream os;
  os << kLayoutHeader << '\n';
  os << "# special=" << to_string(layout.special) << " n_special=" << layout.n_special
     << " n_mamba=" << layout.n_mamba << " positioning=" << to_string(layout.positioning) << '\n';
  for (const auto& b : layout.blocks) {
    os << to_string(b.kind);
    if (b.window) os << " window=" << *b.window;
    if (b.sink) os << " sink=" << *b.sink;
    if (b.moe) os << " ffn=moe";
    os << '\n';
  }
  return os.str();
}

LayoutSpec read_layout(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  bool header = false;
  bool meta = false;
  LayoutSpec l;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (!header) {
      if (t != kLayoutHeader) throw ContractError("layout: missing header '" + std::string(kLayoutHeader) + "'");
      header = true;
      continue;
    }
    std::istringstream fields(t.front() == '#' ? t.substr(1) : t);
    std::string tok;
    if (t.front() == '#') {
      std::vector<std::string> kv;
      while (fields >> tok) kv.push_back(tok);
      if (kv.empty() || kv[0].rfind("special=", 0) != 0) continue;  // plain comment
      for (const auto& f : kv) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw ContractError("layout: bad metadata field '" + f + "'");
        const std::string key = f.substr(0, eq);
        const std::string val = f.substr(eq + 1);
        if (key == "special") l.special = parse_block_kind(val);
        else if (key == "n_special") l.n_special = to_int(val, "layout n_special");
        else if (key == "n_mamba") l.n_mamba = to_int(val, "layout n_mamba");
        else if (key == "positioning") l.positioning = parse_positioning(val);
        else throw ContractError("layout: unknown metadata key '" + key + "'");
      }
      meta = true;
      continue;
    }
    fields >> tok;
    BlockSpec b;
    b.kind = parse_block_kind(tok);
    while (fields >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        throw ContractError("layout line " + std::to_string(lineno) + ": expected key=value, got '" + tok + "'");
      }
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "window") b.window = to_int(val, "layout window");
      else if (key == "sink") b.sink = to_int(val, "layout sink");
      else if (key == "ffn") {
        if (val == "moe") b.moe = true;
        else if (val == "dense") b.moe = false;
        else throw ContractError("layout: ffn must be moe or dense");
      } else {
        throw ContractError("layout line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    }
    if ((b.window || b.sink) && b.kind != BlockKind::kSwa) {
      throw ContractError("layout line " + std::to_string(lineno) + ": window/sink only apply to swa blocks");
    }
    l.blocks.push_back(b);
  }
  if (!header) throw ContractError("layout: empty input");
  if (l.blocks.empty()) throw ContractError("layout: no blocks listed");
  if (!meta) {
    // infer counts: the first non-mamba kind found is the special kind
    l.n_mamba = l.count(BlockKind::kMamba);
    l.n_special = l.depth() - l.n_mamba;
    for (BlockKind k : {BlockKind::kAttn, BlockKind::kIntra, BlockKind::kSwa}) {
      if (l.count(k) > 0) {
        l.special = k;
        break;
      }
    }
  }
  return l;
}

void save_layout(const std::string& path, const LayoutSpec& layout) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write layout file " + path);
  f << write_layout(layout);
}

LayoutSpec load_layout(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read layout file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return read_layout(ss.str());
}

std::pair<std::int64_t, std::int64_t> parse_ratio(std::string_view s) {
  const auto c = s.find(':');
  if (c == std::string_view::npos) throw ContractError("ratio must look like s:m, got '" + std::string(s) + "'");
  return {to_int(s.substr(0, c), "ratio"), to_int(s.substr(c + 1), "ratio")};
}

}  // namespace hybridlab
