#include <gtest/gtest.h>

#include <cmath>

#include "segcls/eval.hpp"
#include "segcls/rng.hpp"

using namespace segcls;
using namespace segcls::eval;

namespace {

// O(P*N) enumeration; returns 2*wins + ties so it compares exactly with twice_u.
std::uint64_t brute_twice_u(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return twice;
}

ScoreTable table_from(std::vector<ScoreRow> scores, std::vector<std::vector<int>> labels) {
  ScoreTable t;
  t.scores = std::move(scores);
  t.labels = std::move(labels);
  return t;
}

}  // namespace

TEST(Aggregate, SingleSegmentIsItself) {
  const ScoreRow r{0.1, 0.7, 0.33};
  EXPECT_EQ(aggregate_sample_scores({r}), r);
}

TEST(Aggregate, ThreeSegmentMean) {
  const auto s = aggregate_sample_scores({{0.2}, {0.4}, {0.6}});
  EXPECT_NEAR(s[0], 0.4, 1e-16);
}

TEST(Aggregate, BitwiseEqualToDirectSum) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ScoreRow> segs(1 + rng.below(30), ScoreRow(7));
    for (auto& row : segs)
      for (double& v : row) v = rng.uniform();
    const auto got = aggregate_sample_scores(segs);
    for (std::size_t c = 0; c < 7; ++c) {
      double sum = 0.0;
      for (const auto& row : segs) sum += row[c];
      EXPECT_EQ(got[c], sum / static_cast<double>(segs.size()));
    }
  }
}

TEST(Aggregate, EmptySampleRejected) { EXPECT_THROW(aggregate_sample_scores({}), DataError); }

TEST(Auc, PerfectRanking) { EXPECT_EQ(*auc_binary({0.9, 0.8, 0.1}, {1, 1, 0}).value(), 1.0); }

TEST(Auc, SingleTiedPair) { EXPECT_EQ(*auc_binary({0.5, 0.5}, {1, 0}).value(), 0.5); }

TEST(Auc, TwoWinsOfFour) { EXPECT_EQ(*auc_binary({0.9, 0.7, 0.3, 0.1}, {1, 0, 0, 1}).value(), 0.5); }

TEST(Auc, SingleClassUndefined) {
  EXPECT_FALSE(auc_binary({0.1, 0.2}, {1, 1}).defined());
  EXPECT_FALSE(auc_binary({0.1, 0.2}, {0, 0}).value().has_value());
}

TEST(Auc, MatchesPairEnumerationWithTies) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(999);
    const std::size_t levels = 1 + rng.below(n);  // few levels force duplicates
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(levels)) / static_cast<double>(levels);
      y[i] = rng.uniform() < 0.3 ? 1 : 0;
    }
    const auto r = auc_binary(s, y);
    if (!r.defined()) continue;
    EXPECT_EQ(r.twice_u, brute_twice_u(s, y)) << "trial " << trial;
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(3);
  std::vector<double> s(300), t(300);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    s[i] = rng.uniform(-2, 2);
    t[i] = std::exp(3 * s[i]) + 1.0;
    y[i] = rng.uniform() < 0.5;
  }
  EXPECT_EQ(auc_binary(s, y).twice_u, auc_binary(t, y).twice_u);
}

TEST(Auc, NegatedScoresAndSwappedLabelsComplement) {
  Rng rng(4);
  std::vector<double> s(250), neg(250);
  std::vector<int> y(250), flipped(250);
  for (std::size_t i = 0; i < 250; ++i) {
    s[i] = rng.uniform();
    neg[i] = -s[i];
    y[i] = rng.uniform() < 0.4;
    flipped[i] = 1 - y[i];
  }
  const double a = *auc_binary(s, y).value();
  EXPECT_NEAR(a + *auc_binary(neg, y).value(), 1.0, 1e-15);
  EXPECT_NEAR(*auc_binary(s, flipped).value(), 1.0 - a, 1e-15);
}

TEST(WeightedAuc, PrevalenceWeighting) {
  // class 0: perfect ranking with 3 positives; class 1: one tied pair-set, 1 positive.
  const auto t = table_from({{0.9, 0.5}, {0.8, 0.5}, {0.7, 0.5}, {0.1, 0.5}},
                            {{1, 1}, {1, 0}, {1, 0}, {0, 0}});
  const auto r = weighted_auc(t);
  EXPECT_EQ(*r.per_class[0].auc, 1.0);
  EXPECT_EQ(*r.per_class[1].auc, 0.5);
  EXPECT_DOUBLE_EQ(r.overall, (3 * 1.0 + 1 * 0.5) / 4);
  EXPECT_DOUBLE_EQ(r.overall, 0.875);
}

TEST(WeightedAuc, AllHalfGivesHalf) {
  const auto t = table_from({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}, {{1, 0}, {0, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(weighted_auc(t).overall, 0.5);
}

TEST(WeightedAuc, UndefinedClassesExcluded) {
  const auto t = table_from({{0.9, 0.2, 0.3}, {0.1, 0.4, 0.3}}, {{1, 1, 0}, {0, 1, 0}});
  const auto r = weighted_auc(t);
  EXPECT_EQ(r.undefined_classes, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(r.overall, 1.0);
}

TEST(WeightedAuc, NoDefinedClassRejected) {
  const auto t = table_from({{0.9}, {0.1}}, {{1}, {1}});
  EXPECT_THROW(weighted_auc(t), DataError);
}

TEST(WeightedAuc, EqualPrevalenceIsPlainMean) {
  Rng rng(5);
  std::vector<ScoreRow> s(40, ScoreRow(3));
  std::vector<std::vector<int>> y(40, std::vector<int>(3));
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      s[i][c] = rng.uniform();
      y[i][c] = i < 10 ? 1 : 0;  // 10 positives in every class
    }
  const auto r = weighted_auc(table_from(s, y));
  double mean = 0;
  for (const auto& c : r.per_class) mean += *c.auc / 3.0;
  EXPECT_NEAR(r.overall, mean, 1e-15);
}

TEST(WeightedAuc, JsonShape) {
  const auto t = table_from({{0.9, 0.2}, {0.1, 0.4}}, {{1, 1}, {0, 1}});
  const auto j = to_json(weighted_auc(t));
  EXPECT_EQ(j["overall"], 1.0);
  EXPECT_EQ(j["per_class"][0]["class"], 0);
  EXPECT_EQ(j["per_class"][0]["positives"], 1);
  EXPECT_EQ(j["undefined_classes"][0], 1);
}

TEST(Accuracy, AllCorrect) {
  const auto t = table_from({{0.1, 0.9}, {0.8, 0.2}}, {{0, 1}, {1, 0}});
  EXPECT_EQ(accuracy(t), 1.0);
}

TEST(Accuracy, UniformScoresTieToFirstClass) {
  const auto t = table_from({{0.2, 0.2, 0.2}, {0.5, 0.5, 0.5}}, {{1, 0, 0}, {1, 0, 0}});
  EXPECT_EQ(accuracy(t), 1.0);
  EXPECT_EQ(argmax({0.3, 0.7, 0.7}), 1u);
}

TEST(Accuracy, NonOneHotRejected) {
  EXPECT_THROW(accuracy(table_from({{0.1, 0.9}}, {{1, 1}})), UsageError);
  EXPECT_THROW(accuracy(table_from({{0.1, 0.9}}, {{0, 0}})), UsageError);
}

TEST(Accuracy, MatchesLoopOracle) {
  Rng rng(6);
  std::vector<ScoreRow> s(500, ScoreRow(15));
  std::vector<std::vector<int>> y(500, std::vector<int>(15, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    for (double& v : s[i]) v = static_cast<double>(rng.below(6));
    const std::size_t label = rng.below(15);
    y[i][label] = 1;
    std::size_t best = 0;
    for (std::size_t c = 0; c < 15; ++c)
      if (s[i][c] > s[i][best]) best = c;
    correct += best == label;
  }
  EXPECT_EQ(accuracy(table_from(s, y)), static_cast<double>(correct) / 500.0);
}
