#pragma once

// Correlation/error metrics, a cross-validated ridge probe from frozen
// embeddings to valence, and embedding-collapse diagnostics.

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "softmcl/affect_data.hpp"
#include "softmcl/tensor.hpp"

namespace softmcl {

// Kendall tau-b, O(n log n). Requires n >= 2 and equal lengths; throws
// UndefinedCorrelationError when x or y is constant.
double kendall_tau(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks.
double spearman_rho(std::span<const double> x, std::span<const double> y);
double pearson_r(std::span<const double> x, std::span<const double> y);
double mae(std::span<const double> pred, std::span<const double> gold);
double accuracy(std::span<const int> pred, std::span<const int> gold);

// 1-based ranks, ties receiving the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> x);

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
};

struct ProbeOptions {
  double ridge = 1e-3;
  std::size_t folds = 5;
};

// Fold of each row, a function of the row's content only (identical rows
// share a fold).
std::vector<std::size_t> probe_folds(const Tensor& embeddings, std::span<const double> valences, std::size_t folds);

// Out-of-fold predictions of a centered ridge regression that minimizes
// mean squared error + ridge * |w|^2 per fold. Rows of a skipped fold
// (empty train or test side, or a singular system) are left out.
struct ProbePredictions {
  std::vector<double> predicted;
  std::vector<double> gold;
  std::size_t skipped_folds = 0;
};
ProbePredictions probe_predictions(const Tensor& embeddings, std::span<const double> valences,
                                   const ProbeOptions& options = {});

// r, mae, rho, tau of the pooled out-of-fold predictions. Requires n >= 10.
std::vector<MetricReport> valence_probe(const Tensor& embeddings, std::span<const double> valences,
                                        const ProbeOptions& options = {});

struct CollapseDiagnostics {
  std::optional<double> alignment;  // absent when no pair has similarity >= 0.9
  double uniformity = 0.0;
  // absent when pairwise similarities or cosines are all equal
  std::optional<double> valence_rank_corr;
  std::size_t n = 0;
  std::size_t aligned_pairs = 0;
};

// Computed on L2-normalized rows over all unordered pairs. Requires n >= 10.
CollapseDiagnostics collapse_diagnostics(const Tensor& embeddings, std::span<const ValenceRating> valences);
std::vector<MetricReport> to_reports(const CollapseDiagnostics& d);

inline constexpr const char* kMetricCsvHeader = "metric,value,n";
void write_metric_csv(std::ostream& out, std::span<const MetricReport> reports);

}  // namespace softmcl
