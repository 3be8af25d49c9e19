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
#include <sstream>
#include <vector>

#include "crackseg/explorer.hpp"
#include "crackseg/rng.hpp"
#include "support.hpp"

namespace crackseg {
namespace {

using testing::expect_errc;

DesignPoint pt(std::string id, double eff, double miou) {
  DesignPoint p;
  p.id = std::move(id);
  p.dynamic_eff = eff;
  p.miou = miou;
  return p;
}

// Quadratic reference: a point survives when nothing dominates it strictly.
std::vector<std::pair<double, double>> brute_front(const std::vector<DesignPoint>& pts) {
  std::vector<std::pair<double, double>> out;
  for (const auto& a : pts) {
    bool dominated = false;
    for (const auto& b : pts)
      dominated |= b.dynamic_eff >= a.dynamic_eff && b.miou >= a.miou &&
                   (b.dynamic_eff > a.dynamic_eff || b.miou > a.miou);
    if (!dominated) out.emplace_back(a.dynamic_eff, a.miou);
  }
  std::ranges::sort(out);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::pair<double, double>> coords(const std::vector<DesignPoint>& f) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : f) out.emplace_back(p.dynamic_eff, p.miou);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

TEST(DominanceTest, Cases) {
  EXPECT_EQ(dominance(pt("a", 2, 70), pt("b", 1, 60)), Dominance::a_dominates);
  EXPECT_EQ(dominance(pt("a", 1, 60), pt("b", 1, 61)), Dominance::b_dominates);
  EXPECT_EQ(dominance(pt("a", 2, 60), pt("b", 1, 61)), Dominance::incomparable);
  EXPECT_EQ(dominance(pt("a", 1, 60), pt("b", 1, 60)), Dominance::equal);
}

TEST(ParetoTest, MatchesQuadraticOracle) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<DesignPoint> pts;
    const int n = 1 + static_cast<int>(rng.below(40));
    for (int i = 0; i < n; ++i)
      // coarse grid so ties on either axis are common
      pts.push_back(pt("p" + std::to_string(i), 1.0 + static_cast<double>(rng.below(12)),
                       60.0 + static_cast<double>(rng.below(10))));
    const auto front = pareto_front(pts);
    EXPECT_EQ(coords(front), brute_front(pts)) << "trial " << trial;
    for (std::size_t i = 1; i < front.size(); ++i) {
      EXPECT_GE(front[i].dynamic_eff, front[i - 1].dynamic_eff);
      EXPECT_LE(front[i].miou, front[i - 1].miou);
    }
  }
}

TEST(ParetoTest, InputOrderInvariant) {
  std::vector<DesignPoint> pts{pt("a", 10, 70), pt("b", 20, 69), pt("c", 15, 68), pt("d", 30, 60), pt("e", 5, 71)};
  const auto ref = pareto_front(pts);
  std::ranges::reverse(pts);
  EXPECT_EQ(pareto_front(pts), ref);
  std::swap(pts[0], pts[3]);
  EXPECT_EQ(pareto_front(pts), ref);
}

TEST(ParetoTest, DuplicatesAndTies) {
  const auto f = pareto_front({pt("a", 10, 70), pt("a", 10, 70), pt("b", 10, 70), pt("c", 10, 65)});
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].id, "a");
  EXPECT_EQ(f[1].id, "b");
}

TEST(ParetoTest, Validation) {
  expect_errc([] { pareto_front({}); }, Errc::invalid_parameter);
  expect_errc([] { pareto_front({pt("z", 0, 50)}); }, Errc::invalid_parameter, "'z'");
  expect_errc([] { pareto_front({pt("z", 1, 101)}); }, Errc::invalid_parameter);
}

TEST(TableTest, MeasuredFront) {
  const auto pts = points_from_table(csv::Table::read(std::string(CRACKSEG_DATA_DIR) + "/table3.csv"));
  ASSERT_EQ(pts.size(), 26u);
  const auto front = pareto_front(pts);
  const std::vector<std::pair<double, double>> want{
      {47.92, 71.16}, {102.56, 70.76}, {114.97, 69.87}, {204.99, 69.42}, {544.65, 68.91}};
  EXPECT_EQ(coords(front), want);
  EXPECT_EQ(coords(front), brute_front(pts));
}

TEST(TableTest, PrintedEfficiencyTakesPrecedence) {
  const auto t = csv::Table::parse(
      "base,device,model_bits,data_bits,miou,fps,idle_w,runtime_w,dynamic_eff\n"
      "2,X,int8,int8,70,100,1,2,123.45\n"
      "4,Y,int8,int8,71,100,1,3,\n");
  const auto pts = points_from_table(t);
  EXPECT_DOUBLE_EQ(pts[0].dynamic_eff, 123.45);
  EXPECT_DOUBLE_EQ(pts[1].dynamic_eff, 50.0);
  EXPECT_DOUBLE_EQ(*pts[1].runtime_eff, 100.0 / 3.0);
  EXPECT_EQ(pts[0].id, "c2 X int8/int8");
  EXPECT_EQ(pts[0].precision, "int8/int8");
}

TEST(TableTest, Errors) {
  expect_errc([] { points_from_table(csv::Table::parse("base,device,model_bits,data_bits,miou\n")); }, Errc::parse);
  expect_errc([] { points_from_table(csv::Table::parse("base,device,model_bits,miou,dynamic_eff\n")); },
              Errc::parse, "data_bits");
  expect_errc(
      [] {
        points_from_table(csv::Table::parse(
            "base,device,model_bits,data_bits,miou,fps,idle_w,runtime_w\n2,X,a,b,70,100,3,2\n"));
      },
      Errc::invalid_parameter, "line 2");
  expect_errc([] { csv::Table::parse("a,b\n1\n"); }, Errc::parse, ":2:");
  expect_errc([] { csv::Table::parse("a,a\n"); }, Errc::parse, "duplicate");
  expect_errc(
      [] { points_from_table(csv::Table::parse("base,device,model_bits,data_bits,miou,dynamic_eff\nx,X,a,b,70,1\n")); },
      Errc::parse);
}

TEST(RenderTest, SvgAndAscii) {
  const std::vector<DesignPoint> pts{pt("a<b", 10, 70), pt("c", 100, 65), pt("d", 50, 60)};
  const auto front = pareto_front(pts);
  const auto svg = render_svg(pts, front);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 5, true);
  EXPECT_NE(svg.find("crimson"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  const auto ascii = render_ascii(pts, front, 40, 10);
  std::string grid;
  std::istringstream lines(ascii);
  for (std::string line; std::getline(lines, line);)
    if (!line.empty() && line[0] == '|') grid += line;
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '*'), 2);
  EXPECT_EQ(std::count(grid.begin(), grid.end(), 'o'), 1);
  expect_errc([&] { render_ascii(pts, front, 4, 10); }, Errc::invalid_parameter);
}

TEST(FrontCsvTest, Format) {
  EXPECT_EQ(front_csv({pt("a", 47.921, 71.159)}), "id,base,device,precision,dynamic_eff,miou\na,0,,,47.92,71.16\n");
}

}  // namespace
}  // namespace crackseg
