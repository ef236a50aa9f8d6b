// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "lovasz_oracle.hpp"
#include "patchgraph/losses.hpp"
#include "test_util.hpp"

namespace {

using namespace pgtest;

LabelMask mask_of(std::size_t h, std::size_t w, std::vector<std::uint8_t> px) {
  LabelMask m(h, w);
  m.pixels = std::move(px);
  return m;
}

Tensor one_hot(const LabelMask& m, std::size_t c) {
  Tensor p(m.size(), c, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) p(i, m.pixels[i] == kIgnoreLabel ? 0 : m.pixels[i]) = 1.0;
  return p;
}

double eval(const std::function<Var(Var)>& f, const Tensor& probs) {
  Tape tape;
  return f(tape.constant(probs)).value().item();
}

// --- class weights ---------------------------------------------------------------

TEST(ClassWeights, BalancedGivesOnes) {
  std::vector<std::uint64_t> counts{50, 50, 50};
  for (double w : class_weights_cb_sqrt(counts).values) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(ClassWeights, TwoClassRatio) {
  std::vector<std::uint64_t> counts{99, 1};
  auto w = class_weights_cb_sqrt(counts).values;
  EXPECT_NEAR(w[1] / w[0], std::sqrt(50.0), 1e-12);
  EXPECT_NEAR((w[0] + w[1]) / 2, 1.0, 1e-15);
}

TEST(ClassWeights, ThreeClassFormula) {
  std::vector<std::uint64_t> counts{9, 4, 1};
  auto w = class_weights_cb_sqrt(counts).values;
  const double raw[3] = {1 / std::sqrt(10.0), 1 / std::sqrt(5.0), 1 / std::sqrt(2.0)};
  const double mean = (raw[0] + raw[1] + raw[2]) / 3;
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(w[c], raw[c] / mean, 1e-14);
}

TEST(ClassWeights, AllZeroIsConfigError) {
  std::vector<std::uint64_t> counts{0, 0};
  EXPECT_THROW(class_weights_cb_sqrt(counts), ConfigError);
}

// --- CE -----------------------------------------------------------------------------

TEST(CrossEntropy, PerfectPredictionIsZero) {
  LabelMask m = mask_of(2, 2, {0, 1, 1, 0});
  EXPECT_LE(eval([&](Var p) { return ce_loss(p, m, uniform_class_weights(2)); }, one_hot(m, 2)), 1e-11);
}

TEST(CrossEntropy, UniformIsLogTwo) {
  LabelMask m = mask_of(2, 2, {0, 1, 1, 0});
  EXPECT_NEAR(eval([&](Var p) { return ce_loss(p, m, uniform_class_weights(2)); }, Tensor(4, 2, 0.5)), std::log(2.0),
              1e-15);
}

TEST(CrossEntropy, WeightedHandCase) {
  LabelMask m = mask_of(1, 4, {0, 1, 1, 0});
  Tensor p = Tensor::from_rows({{0.8, 0.2}, {0.3, 0.7}, {0.6, 0.4}, {0.5, 0.5}});
  const double expect = (-std::log(0.8) - 2 * std::log(0.7) - 2 * std::log(0.4) - std::log(0.5)) / 4;
  EXPECT_NEAR(eval([&](Var v) { return ce_loss(v, m, ClassWeightVector{{1.0, 2.0}}); }, p), expect, 1e-15);
}

TEST(CrossEntropy, IgnorePixelsDoNotMatter) {
  LabelMask m = mask_of(1, 3, {0, kIgnoreLabel, 1});
  Tensor a = Tensor::from_rows({{0.7, 0.3}, {0.9, 0.1}, {0.4, 0.6}});
  Tensor b = a;
  b(1, 0) = 0.05;
  b(1, 1) = 0.95;
  auto f = [&](Var p) { return ce_loss(p, m, ClassWeightVector{{1.0, 3.0}}); };
  EXPECT_EQ(eval(f, a), eval(f, b));
}

TEST(CrossEntropy, LabelOutOfRangeIsDataError) {
  LabelMask m = mask_of(1, 2, {0, 3});
  EXPECT_THROW(eval([&](Var p) { return ce_loss(p, m, uniform_class_weights(2)); }, Tensor(2, 2, 0.5)), DataError);
}

// --- Dice ---------------------------------------------------------------------------

TEST(Dice, PerfectPredictionOnLargeMask) {
  Rng rng(1);
  LabelMask m(40, 40);
  for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng.below(3));
  EXPECT_LT(eval([&](Var p) { return dice_loss(p, m); }, one_hot(m, 3)), 1e-3);
}

TEST(Dice, DisjointHardPrediction) {
  LabelMask m(10, 20);
  for (std::size_t i = 0; i < 200; ++i) m.pixels[i] = i < 100 ? 0 : 1;
  LabelMask swapped = m;
  for (auto& v : swapped.pixels) v = 1 - v;
  EXPECT_NEAR(eval([&](Var p) { return dice_loss(p, m); }, one_hot(swapped, 2)), 1.0 - 1.0 / 201.0, 1e-15);
}

TEST(Dice, UniformOnBalancedMask) {
  LabelMask m = mask_of(2, 4, {0, 0, 0, 0, 1, 1, 1, 1});
  EXPECT_NEAR(eval([&](Var p) { return dice_loss(p, m); }, Tensor(8, 2, 0.5)), 1.0 - 5.0 / 9.0, 1e-15);
}

TEST(Dice, AbsentClassesExcluded) {
  LabelMask m = mask_of(1, 4, {0, 0, 0, 0});
  Tensor p(4, 3, 0.0);
  for (std::size_t i = 0; i < 4; ++i) p(i, 0) = 1.0;
  // classes 1 and 2 are absent; only class 0 counts: (8 + 1) / (8 + 1)
  EXPECT_NEAR(eval([&](Var v) { return dice_loss(v, m); }, p), 0.0, 1e-15);
}

// --- Lovasz -------------------------------------------------------------------------

TEST(Lovasz, PerfectHardPredictionIsZero) {
  LabelMask m = mask_of(2, 3, {0, 1, 2, 2, 1, 0});
  EXPECT_EQ(eval([&](Var p) { return lovasz_softmax_loss(p, m); }, one_hot(m, 3)), 0.0);
}

TEST(Lovasz, FullyWrongBinaryIsOne) {
  LabelMask m = mask_of(1, 4, {0, 1, 1, 0});
  LabelMask wrong = mask_of(1, 4, {1, 0, 0, 1});
  EXPECT_NEAR(eval([&](Var p) { return lovasz_softmax_loss(p, m); }, one_hot(wrong, 2)), 1.0, 1e-15);
}

TEST(Lovasz, FourPixelCaseMatchesExtension) {
  LabelMask m = mask_of(1, 4, {1, 1, 0, 0});
  Tensor p = Tensor::from_rows({{0.1, 0.9}, {0.4, 0.6}, {0.6, 0.4}, {0.9, 0.1}});
  const double got = eval([&](Var v) { return lovasz_softmax_loss(v, m); }, p);
  EXPECT_NEAR(got, oracle::lovasz_softmax(p, m), 1e-15);
  // by hand: class 1 errors [0.1, 0.4, 0.4, 0.1]; class 0 is symmetric
  EXPECT_NEAR(got, 0.3 * (1.0 / 3.0) + 0.3 * 0.5 + 0.1 * 0.5, 1e-15);
}

TEST(Lovasz, RandomSoftPredictionsMatchExtension) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    LabelMask m(3, 5);
    for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng.below(4));
    m.pixels[0] = kIgnoreLabel;
    Tensor p = dense::softmax_rows(random_tensor(rng, 15, 4, -2, 2));
    EXPECT_NEAR(eval([&](Var v) { return lovasz_softmax_loss(v, m); }, p), oracle::lovasz_softmax(p, m), 1e-14);
  }
}

TEST(Lovasz, HardPredictionsEqualJaccardLossExhaustively) {
  // every binary gt / prediction pair on up to 4 pixels
  for (int n = 1; n <= 4; ++n)
    for (int gbits = 0; gbits < (1 << n); ++gbits)
      for (int pbits = 0; pbits < (1 << n); ++pbits) {
        LabelMask gt(1, n), pred(1, n);
        std::vector<int> g(n), q(n);
        for (int i = 0; i < n; ++i) {
          gt.pixels[i] = static_cast<std::uint8_t>(g[i] = (gbits >> i) & 1);
          pred.pixels[i] = static_cast<std::uint8_t>(q[i] = (pbits >> i) & 1);
        }
        EXPECT_NEAR(eval([&](Var v) { return lovasz_softmax_loss(v, gt); }, one_hot(pred, 2)),
                    oracle::mean_jaccard_loss(g, q, 2), 1e-15);
      }
}

// --- Potts --------------------------------------------------------------------------

TEST(Potts, ConstantPosteriorsAreZero) {
  Rng rng(2);
  GrayImage img(3, 4);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  EXPECT_EQ(eval([&](Var p) { return potts_loss(p, img); }, Tensor(12, 3, 1.0 / 3)), 0.0);
}

TEST(Potts, CheckerboardOnConstantImageIsOne) {
  GrayImage img(4, 5, 90);
  LabelMask board(4, 5);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) board.at(r, c) = static_cast<std::uint8_t>((r + c) % 2);
  EXPECT_NEAR(eval([&](Var p) { return potts_loss(p, img); }, one_hot(board, 2)), 1.0, 1e-15);
}

TEST(Potts, MatchesDoubleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    GrayImage img(3, 3);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
    Tensor p = dense::softmax_rows(random_tensor(rng, 9, 3, -2, 2));
    // sigma^2 = population variance of all signed neighbour differences
    std::vector<std::tuple<int, int, double>> pairs;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        if (c + 1 < 3) pairs.emplace_back(r * 3 + c, r * 3 + c + 1, double(img.at(r, c)) - img.at(r, c + 1));
        if (r + 1 < 3) pairs.emplace_back(r * 3 + c, (r + 1) * 3 + c, double(img.at(r, c)) - img.at(r + 1, c));
      }
    double mean = 0, var = 0;
    for (auto& [a, b, d] : pairs) mean += d;
    mean /= pairs.size();
    for (auto& [a, b, d] : pairs) var += (d - mean) * (d - mean);
    var /= pairs.size();
    double total = 0;
    for (auto& [a, b, d] : pairs) {
      double d2 = 0;
      for (int k = 0; k < 3; ++k) d2 += (p(a, k) - p(b, k)) * (p(a, k) - p(b, k));
      total += std::exp(-d * d / (2 * var)) * 0.5 * d2;
    }
    EXPECT_NEAR(eval([&](Var v) { return potts_loss(v, img); }, p), total / pairs.size(), 1e-15);
  }
}

// --- composite ----------------------------------------------------------------------

TEST(Composite, DefaultMixes) {
  LossWeights a = LossWeights::composite();
  EXPECT_EQ(a.ce, 0.6);
  EXPECT_EQ(a.dice, 0.2);
  EXPECT_EQ(a.lovasz, 0.2);
  EXPECT_EQ(a.potts, 0.05);
  LossWeights b = LossWeights::ce_only();
  EXPECT_EQ(b.ce, 1.0);
  EXPECT_EQ(b.dice + b.lovasz + b.potts, 0.0);
}

TEST(Composite, WeightedSumOfTerms) {
  Rng rng(3);
  LabelMask m(3, 3);
  for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng.below(3));
  GrayImage img(3, 3);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  Tensor p = dense::softmax_rows(random_tensor(rng, 9, 3));
  ClassWeightVector cw{{0.5, 1.0, 1.5}};
  Tape tape;
  Var probs = tape.constant(p);
  LossBreakdown b = segmentation_loss(probs, m, &img, cw, LossWeights::composite());
  const double expect = 0.6 * ce_loss(probs, m, cw).value().item() + 0.2 * dice_loss(probs, m).value().item() +
                        0.2 * lovasz_softmax_loss(probs, m).value().item() +
                        0.05 * potts_loss(probs, img).value().item();
  EXPECT_NEAR(b.total.value().item(), expect, 1e-15);
}

TEST(Composite, DiceOnlyEqualsDice) {
  Rng rng(4);
  LabelMask m(2, 3);
  for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng.below(2));
  Tensor p = dense::softmax_rows(random_tensor(rng, 6, 2));
  Tape tape;
  Var probs = tape.constant(p);
  LossBreakdown b = segmentation_loss(probs, m, nullptr, uniform_class_weights(2), LossWeights{0, 1, 0, 0});
  EXPECT_EQ(b.total.value().item(), dice_loss(probs, m).value().item());
}

TEST(Composite, PottsWithoutImageIsConfigError) {
  LabelMask m(1, 2);
  Tape tape;
  Var probs = tape.constant(Tensor(2, 2, 0.5));
  EXPECT_THROW(segmentation_loss(probs, m, nullptr, uniform_class_weights(2), LossWeights::composite()), ConfigError);
}

TEST(Composite, InvalidWeightsRejected) {
  EXPECT_THROW((LossWeights{0, 0, 0, 0}).validate(), ConfigError);
  EXPECT_THROW((LossWeights{-1, 1, 0, 0}).validate(), ConfigError);
}

TEST(Losses, AllNonNegative) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    LabelMask m(4, 4);
    for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng.below(3));
    GrayImage img(4, 4);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
    Tensor p = dense::softmax_rows(random_tensor(rng, 16, 3, -4, 4));
    Tape tape;
    Var probs = tape.constant(p);
    LossBreakdown b = segmentation_loss(probs, m, &img, class_weights_cb_sqrt(std::vector<std::uint64_t>{3, 5, 8}),
                                        LossWeights{1, 1, 1, 1});
    for (Var t : {b.terms.ce, b.terms.dice, b.terms.lovasz, b.terms.potts}) EXPECT_GE(t.value().item(), 0.0);
    EXPECT_LE(b.terms.dice.value().item(), 1.0);
    EXPECT_LE(b.terms.lovasz.value().item(), 1.0);
    EXPECT_LE(b.terms.potts.value().item(), 1.0);
  }
}

}  // namespace
