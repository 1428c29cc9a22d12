#include "softmcl/eval_metrics.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "fixtures.hpp"
#include "gtest/gtest.h"
#include "softmcl/errors.hpp"

using namespace softmcl;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, bool with_ties) {
  std::vector<double> v(n);
  if (with_ties) {
    std::uniform_int_distribution<int> d(1, 4);
    for (double& x : v) x = d(rng);
  } else {
    std::normal_distribution<double> d(0.0, 1.0);
    for (double& x : v) x = d(rng);
  }
  return v;
}

}  // namespace

TEST(kendall_tau, perfect_agreement_and_reversal) {
  const std::vector<double> x{0.3, 1.2, -4.0, 7.5, 2.2};
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  EXPECT_DOUBLE_EQ(kendall_tau(x, x), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(x, neg), -1.0);
}

TEST(kendall_tau, small_example_matches_pair_count) {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{1, 3, 2, 4};
  EXPECT_NEAR(kendall_tau(x, y), oracle::kendall_tau_b(x, y), 1e-15);
  EXPECT_NEAR(kendall_tau(x, y), 4.0 / 6.0, 1e-15);
}

TEST(kendall_tau, ties_match_pair_count) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = random_values(rng, 12, true);
    const auto y = random_values(rng, 12, trial % 2 == 0);
    EXPECT_NEAR(kendall_tau(x, y), oracle::kendall_tau_b(x, y), 1e-12);
  }
}

TEST(kendall_tau, undefined_and_shape_errors) {
  EXPECT_THROW(kendall_tau(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}), UndefinedCorrelationError);
  EXPECT_THROW(kendall_tau(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(pearson_r, affine_relation) {
  const std::vector<double> x{0.5, 1.5, 3.0, -2.0, 8.0};
  std::vector<double> y;
  for (double v : x) y.push_back(2.0 * v + 1.0);
  EXPECT_NEAR(pearson_r(x, y), 1.0, 1e-15);
  EXPECT_THROW(pearson_r(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedCorrelationError);
}

TEST(mae, example) {
  EXPECT_DOUBLE_EQ(mae(std::vector<double>{1, 2}, std::vector<double>{1, 4}), 1.0);
}

TEST(accuracy, example) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{1, -1, 0, 1}, std::vector<int>{1, 1, 0, -1}), 0.5);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), ParameterError);
}

TEST(spearman_rho, matches_rank_then_pearson) {
  std::mt19937_64 rng(22);
  const auto x = random_values(rng, 6, false);
  const auto y = random_values(rng, 6, false);
  EXPECT_NEAR(spearman_rho(x, y), oracle::spearman(x, y), 1e-12);
  const auto tx = random_values(rng, 9, true);
  const auto ty = random_values(rng, 9, true);
  EXPECT_NEAR(spearman_rho(tx, ty), oracle::spearman(tx, ty), 1e-12);
}

TEST(average_ranks, ties_share_mean_rank) {
  const std::vector<double> r = average_ranks(std::vector<double>{10, 20, 10, 5});
  EXPECT_EQ(r, (std::vector<double>{2.5, 4.0, 2.5, 1.0}));
}

TEST(correlations, monotone_and_affine_invariance) {
  std::mt19937_64 rng(23);
  const auto x = random_values(rng, 11, false);
  const auto y = random_values(rng, 11, false);
  std::vector<double> fx;
  std::vector<double> ax;
  for (double v : x) {
    fx.push_back(std::exp(3.0 * v) + v * v * v);
    ax.push_back(-0.5 + 4.0 * v);
  }
  EXPECT_NEAR(kendall_tau(fx, y), kendall_tau(x, y), 1e-12);
  EXPECT_NEAR(spearman_rho(fx, y), spearman_rho(x, y), 1e-12);
  EXPECT_NEAR(pearson_r(ax, y), pearson_r(x, y), 1e-12);
}

TEST(valence_probe, informative_features) {
  // One-hot of integer valence buckets.
  std::vector<double> v;
  Tensor emb({90, 9});
  for (std::size_t i = 0; i < 90; ++i) {
    const std::size_t bucket = i % 9;
    v.push_back(1.0 + static_cast<double>(bucket));
    emb.at(i, bucket) = 1.0;
  }
  // Distinct row content so rows spread across folds.
  Tensor noisy = emb;
  std::mt19937_64 rng(24);
  std::normal_distribution<double> n(0.0, 1e-3);
  for (double& x : noisy.data()) x += n(rng);
  const auto reports = valence_probe(noisy, v);
  ASSERT_EQ(reports.size(), 4u);
  EXPECT_EQ(reports[0].metric, "probe_r");
  EXPECT_GT(reports[0].value, 0.999);
  EXPECT_EQ(reports[1].metric, "probe_mae");
  EXPECT_LT(reports[1].value, 0.05);
}

TEST(valence_probe, uninformative_features) {
  std::mt19937_64 rng(25);
  const Tensor emb = fixtures::random_tensor(rng, {2000, 4});
  const auto v = oracle::random_valences(rng, 2000);
  EXPECT_LT(std::abs(valence_probe(emb, v)[0].value), 0.1);
}

TEST(valence_probe, matches_normal_equations) {
  std::mt19937_64 rng(26);
  const std::size_t n = 60;
  const std::size_t d = 5;
  const Tensor emb = fixtures::random_tensor(rng, {n, d});
  const auto v = oracle::random_valences(rng, n);
  const ProbeOptions opts;
  const ProbePredictions p = probe_predictions(emb, v, opts);
  const auto folds = probe_folds(emb, v, opts.folds);
  const auto rows = fixtures::to_matrix(emb);
  std::vector<double> expected_pred;
  std::vector<double> expected_gold;
  for (std::size_t f = 0; f < opts.folds; ++f) {
    oracle::Matrix train;
    oracle::Matrix test;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      if (folds[i] == f) {
        test.push_back(rows[i]);
        expected_gold.push_back(v[i]);
      } else {
        train.push_back(rows[i]);
        y.push_back(v[i]);
      }
    }
    if (test.empty()) continue;
    for (double x : oracle::ridge_predict(train, y, test, opts.ridge)) expected_pred.push_back(x);
  }
  ASSERT_EQ(p.predicted.size(), expected_pred.size());
  for (std::size_t i = 0; i < expected_pred.size(); ++i) {
    EXPECT_NEAR(p.predicted[i], expected_pred[i], 1e-9);
    EXPECT_EQ(p.gold[i], expected_gold[i]);
  }
  EXPECT_NEAR(valence_probe(emb, v)[0].value, oracle::pearson(expected_pred, expected_gold), 1e-9);
}

TEST(valence_probe, invariant_to_duplicating_dataset) {
  std::mt19937_64 rng(27);
  const Tensor emb = fixtures::random_tensor(rng, {40, 3});
  std::vector<double> v;
  for (std::size_t i = 0; i < 40; ++i) v.push_back(5.0 + 1.5 * emb.at(i, 0) - emb.at(i, 2) + 0.2 * emb.at(i, 1));
  Tensor twice({80, 3});
  std::vector<double> v2;
  for (std::size_t r = 0; r < 80; ++r) {
    for (std::size_t c = 0; c < 3; ++c) twice.at(r, c) = emb.at(r % 40, c);
    v2.push_back(v[r % 40]);
  }
  const auto a = valence_probe(emb, v);
  const auto b = valence_probe(twice, v2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].value, b[i].value, 1e-9) << a[i].metric;
}

TEST(valence_probe, too_few_rows) {
  EXPECT_THROW(valence_probe(Tensor({5, 2}), std::vector<double>(5, 3.0)), ParameterError);
}

TEST(probe_predictions, singular_fold_is_skipped) {
  // Rank-deficient design with no ridge.
  Tensor emb({30, 2});
  std::vector<double> v;
  for (std::size_t i = 0; i < 30; ++i) {
    emb.at(i, 0) = static_cast<double>(i);
    emb.at(i, 1) = 2.0 * static_cast<double>(i);
    v.push_back(1.0 + 0.2 * static_cast<double>(i));
  }
  ProbeOptions o;
  o.ridge = 0.0;
  const ProbePredictions p = probe_predictions(emb, v, o);
  EXPECT_GT(p.skipped_folds, 0u);
  EXPECT_LT(p.predicted.size(), 30u);
}

TEST(collapse_diagnostics, identical_embeddings) {
  const Tensor emb({12, 4}, 0.7);
  std::mt19937_64 rng(28);
  const auto d = collapse_diagnostics(emb, fixtures::ratings(oracle::random_valences(rng, 12)));
  EXPECT_NEAR(d.uniformity, 0.0, 1e-12);
  ASSERT_TRUE(d.alignment.has_value());
  EXPECT_NEAR(*d.alignment, 0.0, 1e-12);
  EXPECT_FALSE(d.valence_rank_corr.has_value());
}

TEST(collapse_diagnostics, valence_on_a_great_circle) {
  std::mt19937_64 rng(29);
  const auto v = oracle::random_valences(rng, 15);
  Tensor emb({15, 2});
  for (std::size_t i = 0; i < 15; ++i) {
    const double angle = (v[i] - 1.0) / 8.0 * 3.0;
    emb.at(i, 0) = std::cos(angle);
    emb.at(i, 1) = std::sin(angle);
  }
  const auto d = collapse_diagnostics(emb, fixtures::ratings(v));
  ASSERT_TRUE(d.valence_rank_corr.has_value());
  EXPECT_NEAR(*d.valence_rank_corr, 1.0, 1e-12);
}

TEST(collapse_diagnostics, matches_all_pairs_oracle) {
  std::mt19937_64 rng(30);
  const auto emb = oracle::random_matrix(rng, 25, 6);
  const auto v = oracle::random_valences(rng, 25);
  const auto d = collapse_diagnostics(fixtures::to_tensor(emb), fixtures::ratings(v));
  const auto o = oracle::collapse(emb, v);
  ASSERT_TRUE(d.alignment.has_value());
  EXPECT_EQ(d.aligned_pairs, o.aligned_pairs);
  EXPECT_NEAR(*d.alignment, o.alignment, 1e-10);
  EXPECT_NEAR(d.uniformity, o.uniformity, 1e-10);
  EXPECT_NEAR(*d.valence_rank_corr, o.rank_corr, 1e-10);
}

TEST(collapse_diagnostics, rank_corr_invariant_to_rotation) {
  std::mt19937_64 rng(31);
  const auto emb = oracle::random_matrix(rng, 20, 3);
  const auto v = oracle::random_valences(rng, 20);
  // Rotation about the z axis followed by one about the x axis.
  const double a = 0.7;
  const double b = -1.3;
  oracle::Matrix rotated;
  for (const auto& r : emb) {
    const double x1 = std::cos(a) * r[0] - std::sin(a) * r[1];
    const double y1 = std::sin(a) * r[0] + std::cos(a) * r[1];
    rotated.push_back({x1, std::cos(b) * y1 - std::sin(b) * r[2], std::sin(b) * y1 + std::cos(b) * r[2]});
  }
  const auto d0 = collapse_diagnostics(fixtures::to_tensor(emb), fixtures::ratings(v));
  const auto d1 = collapse_diagnostics(fixtures::to_tensor(rotated), fixtures::ratings(v));
  EXPECT_NEAR(*d0.valence_rank_corr, *d1.valence_rank_corr, 1e-12);
}

TEST(collapse_diagnostics, no_aligned_pairs_is_absent) {
  std::vector<double> v;
  for (int i = 0; i < 10; ++i) v.push_back(1.0 + 0.85 * i);
  std::mt19937_64 rng(32);
  const auto d = collapse_diagnostics(fixtures::random_tensor(rng, {10, 3}), fixtures::ratings(v));
  EXPECT_FALSE(d.alignment.has_value());
  EXPECT_EQ(d.aligned_pairs, 0u);
  for (const auto& r : to_reports(d)) EXPECT_NE(r.metric, "alignment");
}

TEST(metric_csv, header_and_rows) {
  std::ostringstream out;
  const std::vector<MetricReport> rows{{"probe_r", 0.5, 10}, {"uniformity", -1.25, 12}};
  write_metric_csv(out, rows);
  EXPECT_EQ(out.str(), "metric,value,n\nprobe_r,0.5,10\nuniformity,-1.25,12\n");
}
