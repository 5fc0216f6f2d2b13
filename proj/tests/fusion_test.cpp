#include "gridnas/fusion.hpp"

#include <vector>

#include <gtest/gtest.h>

#include "gridnas/rng.hpp"

namespace gridnas {
namespace {

std::vector<double> fuse(const std::vector<double>& in, std::size_t out_width) {
  std::vector<double> out(out_width, 0.0);
  channel_fuse(in, out);
  return out;
}

TEST(ChannelFuse, GrowTilesInput) {
  std::vector<double> in(24);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<double>(i) + 1.0;
  const auto out = fuse(in, 40);
  for (std::size_t j = 0; j < 40; ++j) EXPECT_EQ(out[j], in[j % 24]);
}

TEST(ChannelFuse, ShrinkAveragesGroups) {
  std::vector<double> in(120);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<double>(i);
  const auto out = fuse(in, 40);
  for (std::size_t j = 0; j < 40; ++j) {
    EXPECT_DOUBLE_EQ(out[j], (in[3 * j] + in[3 * j + 1] + in[3 * j + 2]) / 3.0);
  }
}

TEST(ChannelFuse, EqualWidthIsIdentity) {
  std::vector<double> in{1.5, -2.0, 0.25};
  EXPECT_EQ(fuse(in, 3), in);
}

TEST(ChannelFuse, ShrinkZeroPadsPartialGroups) {
  // 5 -> 2: group size ceil(5/2)+pad -> groups of 3 over zero-padded input.
  const std::vector<double> in{6.0, 3.0, 3.0, 9.0, 3.0};
  const auto out = fuse(in, 2);
  EXPECT_DOUBLE_EQ(out[0], (6.0 + 3.0 + 3.0) / 3.0);
  EXPECT_DOUBLE_EQ(out[1], (9.0 + 3.0 + 0.0) / 3.0);
}

TEST(ChannelFuse, ExactRuleForAllWidthPairs) {
  // Growing tiles the input cyclically; shrinking averages fixed-size
  // groups over the zero-padded input. Check the rule holds verbatim for
  // every width pair up to 64.
  for (std::size_t cin = 1; cin <= 64; ++cin) {
    std::vector<double> in(cin);
    for (std::size_t i = 0; i < cin; ++i) in[i] = static_cast<double>(i) + 1.0;
    for (std::size_t cout = 1; cout <= 64; ++cout) {
      std::vector<double> out(cout, -1.0);
      channel_fuse(in, out);
      if (cout >= cin) {
        for (std::size_t j = 0; j < cout; ++j) {
          ASSERT_EQ(out[j], in[j % cin]) << cin << "->" << cout;
        }
      } else {
        const std::size_t group = (cin + cout - 1) / cout;
        for (std::size_t j = 0; j < cout; ++j) {
          double acc = 0.0;
          for (std::size_t i = j * group; i < (j + 1) * group && i < cin; ++i) {
            acc += in[i];
          }
          ASSERT_NEAR(out[j], acc / static_cast<double>(group), 1e-12)
              << cin << "->" << cout;
        }
      }
    }
  }
}

TEST(ChannelFuse, Linearity) {
  Rng rng(5);
  for (auto [cin, cout] : {std::pair<std::size_t, std::size_t>{7, 20},
                           {20, 7},
                           {16, 16}}) {
    std::vector<double> x(cin), y(cin);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);
    std::vector<double> combo(cin);
    for (std::size_t i = 0; i < cin; ++i) combo[i] = 2.0 * x[i] - 3.0 * y[i];
    const auto fc = fuse(combo, cout);
    const auto fx = fuse(x, cout);
    const auto fy = fuse(y, cout);
    for (std::size_t j = 0; j < cout; ++j) {
      EXPECT_NEAR(fc[j], 2.0 * fx[j] - 3.0 * fy[j], 1e-12);
    }
  }
}

TEST(ChannelFuse, PreservesZero) {
  for (std::size_t cout : {1u, 13u, 64u}) {
    const auto out = fuse(std::vector<double>(9, 0.0), cout);
    for (double v : out) EXPECT_EQ(v, 0.0);
  }
}

TEST(ChannelFuse, AdjointMatchesInnerProduct) {
  Rng rng(23);
  for (auto [cin, cout] : {std::pair<std::size_t, std::size_t>{5, 12},
                           {12, 5},
                           {8, 8},
                           {3, 64}}) {
    std::vector<double> x(cin), gy(cout);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : gy) v = rng.uniform(-1, 1);
    const auto y = fuse(x, cout);
    std::vector<double> gx(cin, 0.0);
    channel_fuse_adjoint(gy, gx);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t j = 0; j < cout; ++j) lhs += y[j] * gy[j];
    for (std::size_t i = 0; i < cin; ++i) rhs += x[i] * gx[i];
    EXPECT_NEAR(lhs, rhs, 1e-12) << cin << "->" << cout;
  }
}

TEST(FuseResample, UpsampleRepeatsCells) {
  FeatureMap f;
  f.channels = 1;
  f.height = 1;
  f.width = 2;
  f.data = {1.0, 2.0};
  // divisor 4 -> 2 doubles the spatial resolution.
  const FeatureMap g = fuse_resample(f, 4, 2, 1);
  ASSERT_EQ(g.height, 2);
  ASSERT_EQ(g.width, 4);
  EXPECT_EQ(g.at(0, 0, 0), 1.0);
  EXPECT_EQ(g.at(0, 0, 1), 1.0);
  EXPECT_EQ(g.at(0, 1, 2), 2.0);
  EXPECT_EQ(g.at(0, 1, 3), 2.0);
}

TEST(FuseResample, DownsampleKeepsTopLeft) {
  FeatureMap f;
  f.channels = 1;
  f.height = 2;
  f.width = 2;
  f.data = {1.0, 2.0, 3.0, 4.0};
  const FeatureMap g = fuse_resample(f, 2, 4, 1);
  ASSERT_EQ(g.height, 1);
  ASSERT_EQ(g.width, 1);
  EXPECT_EQ(g.at(0, 0, 0), 1.0);
}

TEST(FuseResample, AdjointMatchesInnerProduct) {
  Rng rng(31);
  FeatureMap f;
  f.channels = 3;
  f.height = 4;
  f.width = 4;
  f.data.resize(3 * 4 * 4);
  for (auto& v : f.data) v = rng.uniform(-1, 1);
  const FeatureMap y = fuse_resample(f, 2, 4, 5);  // downsample + widen channels
  FeatureMap gy = y;
  for (auto& v : gy.data) v = rng.uniform(-1, 1);
  const FeatureMap gx =
      fuse_resample_adjoint(gy, 2, 4, f.channels, f.height, f.width);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) lhs += y.data[i] * gy.data[i];
  for (std::size_t i = 0; i < f.data.size(); ++i) rhs += f.data[i] * gx.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

}  // namespace
}  // namespace gridnas
