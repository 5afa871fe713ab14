#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "hybridlab/layout.hpp"

using namespace hybridlab;

namespace {

bool has_warning(const std::vector<LintMessage>& msgs, const std::string& needle) {
  return std::any_of(msgs.begin(), msgs.end(), [&](const LintMessage& m) {
    return m.level == LintMessage::Level::kWarning && m.text.find(needle) != std::string::npos;
  });
}

std::int64_t warnings(const std::vector<LintMessage>& msgs) {
  return std::count_if(msgs.begin(), msgs.end(), [](const LintMessage& m) { return m.level == LintMessage::Level::kWarning; });
}

}  // namespace

TEST_SUITE("layout-planner") {
  TEST_CASE("published fixed points") {
    const LayoutSpec mid = plan_layout(13, {1, 12}, BlockKind::kAttn, Positioning::kMiddle);
    CHECK(mid.special_indices() == std::vector<std::int64_t>{6});
    const LayoutSpec sc = plan_layout(13, {1, 5}, BlockKind::kAttn, Positioning::kScatter);
    CHECK(sc.special_indices() == std::vector<std::int64_t>{3, 8});
    CHECK(sc.n_special == 2);
    CHECK(sc.n_mamba == 11);
    const LayoutSpec all = plan_layout(16, {1, 0}, BlockKind::kAttn, Positioning::kScatter);
    CHECK(all.count(BlockKind::kAttn) == 16);
    const LayoutSpec none = plan_layout(13, {0, 1}, BlockKind::kAttn, Positioning::kScatter);
    CHECK(none.count(BlockKind::kMamba) == 13);
  }

  TEST_CASE("single block strategies") {
    CHECK(plan_layout_counts(1, 12, BlockKind::kAttn, Positioning::kFront).special_indices() == std::vector<std::int64_t>{0});
    CHECK(plan_layout_counts(1, 12, BlockKind::kAttn, Positioning::kEnd).special_indices() == std::vector<std::int64_t>{12});
    CHECK(plan_layout_counts(1, 12, BlockKind::kAttn, Positioning::kMiddle).special_indices() == std::vector<std::int64_t>{6});
    CHECK(plan_layout_counts(1, 12, BlockKind::kAttn, Positioning::kScatter).special_indices() == std::vector<std::int64_t>{6});
    // even depth: the lower of the two central slots
    CHECK(plan_layout_counts(1, 11, BlockKind::kAttn, Positioning::kScatter).special_indices() == std::vector<std::int64_t>{5});
  }

  TEST_CASE("multi block strategies") {
    const auto cl = plan_layout_counts(3, 10, BlockKind::kIntra, Positioning::kCluster).special_indices();
    CHECK(cl == std::vector<std::int64_t>{5, 6, 7});
    const auto sw = plan_layout_counts(3, 10, BlockKind::kIntra, Positioning::kSandwich).special_indices();
    CHECK(sw.front() == 0);
    CHECK(sw.back() == 12);
    CHECK(sw.size() == 3);
  }

  TEST_CASE("special count rounding") {
    CHECK(special_count(13, {1, 5}) == 2);
    CHECK(special_count(13, {1, 12}) == 1);
    CHECK(special_count(13, {1, 3}) == 3);
    CHECK(special_count(14, {1, 1}) == 7);
    CHECK_THROWS_AS(special_count(0, {1, 1}), ContractError);
    CHECK_THROWS_AS(special_count(4, {0, 0}), ContractError);
    CHECK_THROWS_AS(plan_layout(3, {1, 12}, BlockKind::kAttn, Positioning::kScatter), ContractError);
    CHECK_THROWS_AS(plan_layout_counts(1, 1, BlockKind::kMamba, Positioning::kScatter), ContractError);
  }

  TEST_CASE("counts match the request for every depth and ratio") {
    const std::pair<std::int64_t, std::int64_t> ratios[] = {{1, 1}, {1, 3}, {1, 5}, {1, 12}, {2, 3}};
    const Positioning all[] = {Positioning::kFront,   Positioning::kMiddle,  Positioning::kEnd,
                               Positioning::kCluster, Positioning::kScatter, Positioning::kSandwich};
    for (std::int64_t depth = 1; depth <= 40; ++depth)
      for (auto r : ratios)
        for (Positioning p : all) {
          const std::int64_t k = special_count(depth, r);
          if (k == 0 || k == depth) continue;
          const LayoutSpec l = plan_layout(depth, r, BlockKind::kAttn, p);
          CHECK(l.depth() == depth);
          CHECK(l.count(BlockKind::kAttn) == k);
          CHECK(l.count(BlockKind::kMamba) == depth - k);
          CHECK(plan_layout(depth, r, BlockKind::kAttn, p).blocks == l.blocks);
        }
  }

  TEST_CASE("scatter plans are mirror symmetric") {
    for (std::int64_t depth = 2; depth <= 30; ++depth)
      for (std::int64_t k = 1; k < depth; ++k) {
        auto idx = place_specials(depth, k, Positioning::kScatter);
        std::vector<std::int64_t> mirrored;
        for (auto i : idx) mirrored.push_back(depth - 1 - i);
        std::sort(mirrored.begin(), mirrored.end());
        // mirroring keeps the count and the even spacing: gaps differ by at most one
        CHECK(mirrored.size() == static_cast<std::size_t>(k));
        std::vector<std::int64_t> gaps;
        for (std::size_t j = 1; j < mirrored.size(); ++j) gaps.push_back(mirrored[j] - mirrored[j - 1]);
        if (!gaps.empty()) CHECK(*std::max_element(gaps.begin(), gaps.end()) - *std::min_element(gaps.begin(), gaps.end()) <= 1);
      }
  }

  TEST_CASE("published pairs are representable through counts") {
    for (auto [s, m] : published_count_pairs()) {
      const LayoutSpec l = plan_layout_counts(s, m, BlockKind::kAttn, Positioning::kScatter);
      CHECK(l.count(BlockKind::kAttn) == s);
      CHECK(l.count(BlockKind::kMamba) == m);
    }
  }

  TEST_CASE("lint rules") {
    CHECK(warnings(lint_layout(plan_layout(13, {1, 5}, BlockKind::kAttn, Positioning::kScatter))) == 0);
    CHECK(has_warning(lint_layout(plan_layout(13, {1, 12}, BlockKind::kAttn, Positioning::kFront)), "front"));
    CHECK(has_warning(lint_layout(plan_layout_counts(3, 10, BlockKind::kIntra, Positioning::kSandwich)), "sandwich"));
    const auto heavy = lint_layout(plan_layout_counts(10, 3, BlockKind::kAttn, Positioning::kScatter));
    CHECK(std::any_of(heavy.begin(), heavy.end(), [](const LintMessage& m) { return m.level == LintMessage::Level::kInfo; }));
    CHECK(lint_layout(plan_layout(8, {0, 1}, BlockKind::kAttn, Positioning::kScatter)).empty());
  }

  TEST_CASE("layout text round trip with overrides") {
    LayoutSpec l = plan_layout_counts(3, 10, BlockKind::kAttn, Positioning::kScatter);
    l.blocks[0].kind = BlockKind::kSwa;
    l.blocks[0].window = 128;
    l.blocks[0].sink = 8;
    l.blocks[5].moe = true;
    const std::string text = write_layout(l);
    CHECK(text.rfind(std::string(kLayoutHeader), 0) == 0);
    const LayoutSpec back = read_layout(text);
    CHECK(back.blocks == l.blocks);
    CHECK(back.positioning == l.positioning);
    CHECK(write_layout(back) == text);

    const auto path = std::filesystem::temp_directory_path() / "hybridlab_layout_test.txt";
    save_layout(path.string(), l);
    CHECK(load_layout(path.string()).blocks == l.blocks);
    std::filesystem::remove(path);
  }

  TEST_CASE("layout parser rejects malformed input") {
    CHECK_THROWS_AS(read_layout("not a layout\nattn\n"), ContractError);
    CHECK_THROWS_AS(read_layout(std::string(kLayoutHeader) + "\nbogus\n"), ContractError);
    CHECK_THROWS_AS(read_layout(std::string(kLayoutHeader) + "\n"), ContractError);
    CHECK_THROWS_AS(parse_ratio("1-5"), ContractError);
    CHECK(parse_ratio("1:5") == std::pair<std::int64_t, std::int64_t>{1, 5});
  }
}
