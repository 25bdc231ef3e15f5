#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "support.hpp"

using namespace masr;
using namespace masr::testing;

TEST(Cooccurrence, CountsPerPlaylist) {
  CooccurrenceCounts c;
  c.add_playlist(std::vector<SongId>{1, 2, 3});
  c.add_playlist(std::vector<SongId>{2, 3, 3, 0});
  EXPECT_EQ(c.num_playlists(), 2u);
  EXPECT_EQ(c.count(2), 2u);
  EXPECT_EQ(c.count(1), 1u);
  EXPECT_EQ(c.count(2, 3), 2u);
  EXPECT_EQ(c.count(3, 2), 2u);
  EXPECT_EQ(c.count(1, 3), 1u);
  EXPECT_EQ(c.count(1, 4), 0u);
  EXPECT_EQ(c.count(0), 0u);
}

TEST(Pmi, AlwaysTogetherInOnePlaylist) {
  CooccurrenceCounts c;
  c.add_playlist(std::vector<SongId>{1, 2});
  // P(k,t) = P(k) = P(t) = 1, so PMI = -log P(k) = 0.
  EXPECT_NEAR(pmi(1, 2, c), -std::log(1.0), 1e-15);
}

TEST(Pmi, TogetherInOneOfFourPlaylists) {
  CooccurrenceCounts c;
  c.add_playlist(std::vector<SongId>{1, 2});
  c.add_playlist(std::vector<SongId>{3});
  c.add_playlist(std::vector<SongId>{4});
  c.add_playlist(std::vector<SongId>{5});
  // P(k,t) = P(k) = P(t) = 1/4: PMI = -log(1/4)
  EXPECT_NEAR(pmi(1, 2, c), std::log(4.0), 1e-12);
}

TEST(Pmi, IndependentSongsScoreZero) {
  // P(1) = P(2) = 1/2 and P(1,2) = 1/4.
  CooccurrenceCounts c;
  c.add_playlist(std::vector<SongId>{1, 2});
  c.add_playlist(std::vector<SongId>{1, 3});
  c.add_playlist(std::vector<SongId>{2, 3});
  c.add_playlist(std::vector<SongId>{3});
  EXPECT_NEAR(pmi(1, 2, c), 0.0, 1e-12);
}

TEST(Pmi, SymmetricAndZeroCountRejected) {
  const auto split = planted_cluster_split(1);
  const auto c = CooccurrenceCounts::from_train(split);
  const auto& tr = split.playlists[0].train;
  EXPECT_EQ(pmi(tr[0], tr[1], c), pmi(tr[1], tr[0], c));
  EXPECT_THROW(pmi(1, 150, c), Error);  // songs from different clusters
}

TEST(PmiAttention, HandSoftmax) {
  // PMI(1, 9) = ln 3 and PMI(2, 9) = 0 via P(1,9) = 1/3 with P(1) = P(9) = 1/3,
  // and P(2,9) = 1/3 with P(2) = 1, P(9) = 1/3.
  CooccurrenceCounts c;
  c.add_playlist(std::vector<SongId>{1, 2, 9});
  c.add_playlist(std::vector<SongId>{2});
  c.add_playlist(std::vector<SongId>{2});
  ASSERT_NEAR(pmi(1, 9, c), std::log(3.0), 1e-12);
  ASSERT_NEAR(pmi(2, 9, c), 0.0, 1e-12);
  const auto w = pmi_attention_scores(std::vector<SongId>{1, 2}, 9, c);
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_NEAR(w[1], 0.25, 1e-12);
}

TEST(PmiAttention, UniformFloorAndErrors) {
  CooccurrenceCounts c;
  c.add_playlist(std::vector<SongId>{1, 2, 3});
  const auto eq = pmi_attention_scores(std::vector<SongId>{1, 2}, 3, c);
  EXPECT_NEAR(eq[0], 0.5, 1e-15);
  const auto floored = pmi_attention_scores(std::vector<SongId>{1, 7}, 2, c);
  EXPECT_NEAR(floored[0] + floored[1], 1.0, 1e-12);
  EXPECT_NEAR(floored[1], std::exp(-20.0), 1e-12);
  EXPECT_THROW(pmi_attention_scores(std::vector<SongId>{}, 2, c), Error);
}

TEST(Pearson, Examples) {
  const std::vector<double> x{0.1, 0.2, 0.3};
  EXPECT_NEAR(pearson(x, std::vector<double>{0.2, 0.4, 0.6}), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, std::vector<double>{0.6, 0.4, 0.2}), -1.0, 1e-12);
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
  EXPECT_THROW(pearson(std::vector<double>{1.0}, std::vector<double>{1.0}), Error);
  EXPECT_THROW(pearson(x, std::vector<double>{1.0}), Error);
}

TEST(Pearson, AffineInvariantAndBounded) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> x(50), y(50), y2(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = n(rng);
    y[i] = 0.3 * x[i] + n(rng);
    y2[i] = 4.0 * y[i] - 7.0;
  }
  const double r = pearson(x, y);
  EXPECT_GE(r, -1.0);
  EXPECT_LE(r, 1.0);
  EXPECT_NEAR(pearson(x, y2), r, 1e-12);
}

TEST(AttentionCorrelation, CollectsDistributionsAndWritesCsv) {
  const auto split = planted_cluster_split(2);
  const auto c = CooccurrenceCounts::from_train(split);
  const Model m = random_model(spec_for_split(ModelKind::mass, split, 8), 2);
  const auto rep = attention_correlation(m, split, c);
  EXPECT_EQ(rep.num_playlists, 60u);
  EXPECT_EQ(rep.pairs.size(), 60u * 8u);
  for (PlaylistIndex p = 0; p < 60; ++p) {
    double a = 0.0, b = 0.0;
    for (std::size_t t = 0; t < 8; ++t) {
      a += rep.pairs[p * 8 + t].pmi_att;
      b += rep.pairs[p * 8 + t].model_att;
    }
    EXPECT_NEAR(a, 1.0, 1e-12);
    EXPECT_NEAR(b, 1.0, 1e-12);
  }
  EXPECT_GE(rep.rho, -1.0);
  EXPECT_LE(rep.rho, 1.0);
  std::ostringstream csv;
  write_attention_csv(csv, rep);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "playlist,member,pmi_att,model_att");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 480);

  const Model mdr = Model::create(spec_for_split(ModelKind::mdr, split, 8), 1);
  EXPECT_THROW(attention_correlation(mdr, split, c), Error);
}

TEST(Runtime, MeanAndRatio) {
  const std::vector<double> one{2.5};
  EXPECT_EQ(runtime_report(one).mean_seconds, 2.5);
  const std::vector<double> a{1.0, 3.0}, b{4.0, 4.0};
  EXPECT_EQ(runtime_report(a).mean_seconds, 2.0);
  EXPECT_EQ(runtime_ratio(a, b), 2.0);
  EXPECT_THROW(runtime_report(std::vector<double>{}), Error);
}
