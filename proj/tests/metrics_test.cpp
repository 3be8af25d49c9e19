// Copyright 2026 The crackseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "crackseg/csv.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/rng.hpp"
#include "support.hpp"

namespace crackseg {
namespace {

using testing::expect_errc;

// tp=2 fp=1 fn=1 tn=18: crack IoU 2/4, background IoU 18/20.
std::vector<std::uint8_t> hand_pred() {
  std::vector<std::uint8_t> p(22, 0);
  p[0] = p[1] = p[2] = 1;
  return p;
}
std::vector<std::uint8_t> hand_gt() {
  std::vector<std::uint8_t> g(22, 0);
  g[0] = g[1] = g[3] = 1;
  return g;
}

TEST(ConfusionTest, HandCase) {
  const auto cm = confusion(std::span<const std::uint8_t>(hand_pred()), std::span<const std::uint8_t>(hand_gt()));
  EXPECT_EQ(cm, (ConfusionMatrix{2, 1, 1, 18}));
  EXPECT_EQ(cm.total(), 22u);
}

TEST(ConfusionTest, RejectsMismatch) {
  std::vector<std::uint8_t> a(4, 0), b(5, 0), c{0, 2, 0, 0};
  expect_errc([&] { confusion(std::span<const std::uint8_t>(a), std::span<const std::uint8_t>(b)); }, Errc::shape);
  expect_errc([&] { confusion(std::span<const std::uint8_t>(c), std::span<const std::uint8_t>(a)); },
              Errc::invalid_parameter, "pixel 1");
  Tensor<std::uint8_t> t1({1, 1, 2, 2}), t2({1, 1, 4, 1});
  expect_errc([&] { confusion(t1, t2); }, Errc::shape);
}

TEST(ScoresTest, HandCase) {
  const auto s = scores({2, 1, 1, 18});
  EXPECT_DOUBLE_EQ(s.iou_crack, 0.5);
  EXPECT_DOUBLE_EQ(s.iou_bg, 0.9);
  EXPECT_NEAR(s.miou, 0.7, 1e-12);
  EXPECT_NEAR(s.wiou, 0.068 * 0.9 + 0.932 * 0.5, 1e-12);
  EXPECT_NEAR(s.wiou, 0.5272, 1e-12);
}

TEST(ScoresTest, EmptyUnionIsPerfect) {
  // all background, predicted all background
  const auto s = scores({0, 0, 0, 100});
  EXPECT_EQ(s.iou_crack, 1.0);
  EXPECT_EQ(s.iou_bg, 1.0);
  EXPECT_EQ(iou(0, 0, 0), 1.0);
  EXPECT_EQ(scores({0, 5, 0, 95}).iou_crack, 0.0);
}

TEST(ScoresTest, WeightValidation) {
  expect_errc([] { scores({1, 0, 0, 1}, 0.5, 0.6); }, Errc::invalid_parameter);
  expect_errc([] { scores({1, 0, 0, 1}, -0.1, 1.1); }, Errc::invalid_parameter);
  const auto s = scores({2, 1, 1, 18}, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(s.wiou, s.miou);
}

TEST(ScoresTest, PixelOrderInvariant) {
  Rng rng(3);
  std::vector<std::uint8_t> p(500), g(500);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.bernoulli(0.2);
    g[i] = rng.bernoulli(0.15);
  }
  const auto a = confusion(std::span<const std::uint8_t>(p), std::span<const std::uint8_t>(g));
  std::vector<std::size_t> perm(p.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::uint8_t> p2(p.size()), g2(g.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    p2[i] = p[perm[i]];
    g2[i] = g[perm[i]];
  }
  EXPECT_EQ(confusion(std::span<const std::uint8_t>(p2), std::span<const std::uint8_t>(g2)), a);
}

TEST(DatasetScoresTest, MicroSumsMatrices) {
  const std::vector<ConfusionMatrix> v{{2, 1, 1, 18}, {0, 0, 0, 10}, {5, 0, 5, 0}};
  const auto micro = dataset_scores(v);
  EXPECT_DOUBLE_EQ(micro.iou_crack, 7.0 / 14.0);
  EXPECT_DOUBLE_EQ(micro.iou_bg, 28.0 / 35.0);
  const auto macro = dataset_scores(v, Averaging::macro);
  EXPECT_NEAR(macro.iou_crack, (0.5 + 1.0 + 0.5) / 3.0, 1e-12);
  EXPECT_NEAR(macro.iou_bg, (0.9 + 1.0 + 0.0) / 3.0, 1e-12);
  auto rev = v;
  std::reverse(rev.begin(), rev.end());
  EXPECT_DOUBLE_EQ(dataset_scores(rev).miou, micro.miou);
  expect_errc([] { dataset_scores({}); }, Errc::invalid_parameter);
}

TEST(EnergyTest, Formulas) {
  const auto e = energy_efficiency({"Orin Nano", "fp32/fp32", 378, 6.97, 9.98});
  EXPECT_NEAR(e.dynamic_eff, 378.0 / 3.01, 1e-9);
  EXPECT_NEAR(e.runtime_eff, 378.0 / 9.98, 1e-9);
  expect_errc([] { energy_efficiency({"x", "y", 0, 1, 2}); }, Errc::invalid_parameter);
  expect_errc([] { energy_efficiency({"x", "y", 10, 2, 2}); }, Errc::invalid_parameter);
  expect_errc([] { energy_efficiency({"x", "y", 10, -1, 2}); }, Errc::invalid_parameter);
}

TEST(EnergyTest, TableRowsAgreeWithPrintedColumns) {
  const auto t = csv::Table::read(std::string(CRACKSEG_DATA_DIR) + "/table3.csv");
  ASSERT_EQ(t.rows().size(), 26u);
  for (const auto& r : t.rows()) {
    const auto e = energy_efficiency({t.cell(r, "device"), "", t.number(r, "fps"), t.number(r, "idle_w"),
                                      t.number(r, "runtime_w")});
    EXPECT_NEAR(e.dynamic_eff / t.number(r, "dynamic_eff"), 1.0, 0.005) << "line " << r.line;
    EXPECT_NEAR(e.runtime_eff / t.number(r, "runtime_eff"), 1.0, 0.005) << "line " << r.line;
  }
}

TEST(ScoresCsvTest, Percentages) {
  EXPECT_EQ(scores_csv_header(), "name,iou_bg,iou_crack,miou,wiou");
  EXPECT_EQ(scores_csv_row("hand", scores({2, 1, 1, 18})), "hand,90.00,50.00,70.00,52.72");
}

}  // namespace
}  // namespace crackseg
