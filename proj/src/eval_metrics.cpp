#include "softmcl/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <spdlog/spdlog.h>

#include "softmcl/cl_losses.hpp"
#include "softmcl/csv.hpp"
#include "softmcl/errors.hpp"

namespace softmcl {

namespace {

void require_pair(std::span<const double> x, std::span<const double> y, std::size_t min_n, const char* what) {
  if (x.size() != y.size()) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
  if (x.size() < min_n) throw ParameterError(std::string(what) + ": needs at least " + std::to_string(min_n) + " points");
}

std::uint64_t tie_pairs(std::uint64_t run) { return run * (run - 1) / 2; }

// Inversions (strictly decreasing pairs) of v, sorting it in the process.
std::uint64_t count_inversions(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    v.swap(buf);
  }
  return swaps;
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// Solves (A) x = b for symmetric positive-definite A [d,d] in place.
// Returns false when a pivot is not positive.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * d + k] * a[j * d + k];
    if (!(diag > 1e-300) || !std::isfinite(diag)) return false;
    const double l = std::sqrt(diag);
    a[j * d + j] = l;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * d + k] * b[k];
    b[i] = s / a[i * d + i];
  }
  for (std::size_t i = d; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < d; ++k) s -= a[k * d + i] * b[k];
    b[i] = s / a[i * d + i];
  }
  return true;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, 2, "kendall_tau");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  std::uint64_t x_ties = 0, joint_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    x_ties += tie_pairs(j - i);
    for (std::size_t a = i; a < j;) {
      std::size_t b = a;
      while (b < j && y[order[b]] == y[order[a]]) ++b;
      joint_ties += tie_pairs(b - a);
      a = b;
    }
    i = j;
  }

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::uint64_t swaps = count_inversions(ys);
  std::uint64_t y_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && ys[j] == ys[i]) ++j;
    y_ties += tie_pairs(j - i);
    i = j;
  }

  const std::uint64_t total = tie_pairs(n);
  if (x_ties == total || y_ties == total) throw UndefinedCorrelationError("kendall_tau: constant input");
  const double s = static_cast<double>(total) - static_cast<double>(x_ties) - static_cast<double>(y_ties) +
                   static_cast<double>(joint_ties) - 2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(total - x_ties)) * std::sqrt(static_cast<double>(total - y_ties));
  return std::clamp(s / denom, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, 2, "pearson_r");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("pearson_r: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, 2, "spearman_rho");
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  return pearson_r(rx, ry);
}

double mae(std::span<const double> pred, std::span<const double> gold) {
  require_pair(pred, gold, 1, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gold[i]);
  return s / static_cast<double>(pred.size());
}

double accuracy(std::span<const int> pred, std::span<const int> gold) {
  if (pred.size() != gold.size()) throw ShapeError("accuracy: length mismatch");
  if (pred.empty()) throw ParameterError("accuracy: needs at least 1 point");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

std::vector<std::size_t> probe_folds(const Tensor& embeddings, std::span<const double> valences, std::size_t folds) {
  if (folds == 0) throw ParameterError("probe: folds must be positive");
  std::vector<std::size_t> out(embeddings.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = embeddings.row(r);
    std::uint64_t h = fnv1a(row.data(), row.size_bytes(), 14695981039346656037ULL);
    h = fnv1a(&valences[r], sizeof(double), h);
    out[r] = static_cast<std::size_t>(h % folds);
  }
  return out;
}

ProbePredictions probe_predictions(const Tensor& embeddings, std::span<const double> valences,
                                   const ProbeOptions& options) {
  if (embeddings.rank() != 2 || embeddings.rows() != valences.size()) {
    throw ShapeError("probe: embeddings " + shape_str(embeddings.shape()) + " vs " + std::to_string(valences.size()) +
                     " valences");
  }
  if (options.ridge < 0.0) throw ParameterError("probe: ridge must be non-negative");
  const std::size_t n = embeddings.rows(), d = embeddings.dim(1);
  const std::vector<std::size_t> fold = probe_folds(embeddings, valences, options.folds);
  ProbePredictions out;
  for (std::size_t f = 0; f < options.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    if (train.empty() || test.empty()) {
      spdlog::warn("probe: fold {} has an empty train or test side, skipped", f);
      ++out.skipped_folds;
      continue;
    }
    const double m = static_cast<double>(train.size());
    std::vector<double> mean_x(d, 0.0);
    double mean_y = 0.0;
    for (std::size_t i : train) {
      for (std::size_t c = 0; c < d; ++c) mean_x[c] += embeddings.at(i, c);
      mean_y += valences[i];
    }
    for (double& v : mean_x) v /= m;
    mean_y /= m;

    std::vector<double> a(d * d, 0.0), b(d, 0.0), xc(d);
    for (std::size_t i : train) {
      for (std::size_t c = 0; c < d; ++c) xc[c] = embeddings.at(i, c) - mean_x[c];
      const double yc = valences[i] - mean_y;
      for (std::size_t r = 0; r < d; ++r) {
        b[r] += xc[r] * yc;
        for (std::size_t c = 0; c <= r; ++c) a[r * d + c] += xc[r] * xc[c];
      }
    }
    for (std::size_t r = 0; r < d; ++r) {
      b[r] /= m;
      for (std::size_t c = 0; c <= r; ++c) {
        a[r * d + c] /= m;
        a[c * d + r] = a[r * d + c];
      }
      a[r * d + r] += options.ridge;
    }
    if (!cholesky_solve(a, b, d)) {
      spdlog::warn("probe: fold {} is singular, skipped", f);
      ++out.skipped_folds;
      continue;
    }
    for (std::size_t i : test) {
      double p = mean_y;
      for (std::size_t c = 0; c < d; ++c) p += (embeddings.at(i, c) - mean_x[c]) * b[c];
      out.predicted.push_back(p);
      out.gold.push_back(valences[i]);
    }
  }
  return out;
}

std::vector<MetricReport> valence_probe(const Tensor& embeddings, std::span<const double> valences,
                                        const ProbeOptions& options) {
  if (valences.size() < 10) throw ParameterError("valence_probe: needs at least 10 rows");
  const ProbePredictions p = probe_predictions(embeddings, valences, options);
  if (p.predicted.size() < 2) throw NumericError("valence_probe: every fold was skipped");
  const std::size_t n = p.predicted.size();
  return {{"probe_r", pearson_r(p.predicted, p.gold), n},
          {"probe_mae", mae(p.predicted, p.gold), n},
          {"probe_rho", spearman_rho(p.predicted, p.gold), n},
          {"probe_tau", kendall_tau(p.predicted, p.gold), n}};
}

CollapseDiagnostics collapse_diagnostics(const Tensor& embeddings, std::span<const ValenceRating> valences) {
  if (embeddings.rank() != 2 || embeddings.rows() != valences.size()) {
    throw ShapeError("collapse_diagnostics: embeddings/valences mismatch");
  }
  const std::size_t n = embeddings.rows(), d = embeddings.dim(1);
  if (n < 10) throw ParameterError("collapse_diagnostics: needs at least 10 rows");
  Tensor z = embeddings;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = z.row(r);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    const double norm = std::max(std::sqrt(ss), 1e-12);
    for (double& v : row) v /= norm;
  }
  const std::size_t pairs = n * (n - 1) / 2;
  std::vector<double> deltas, cosines;
  deltas.reserve(pairs);
  cosines.reserve(pairs);
  double align_sum = 0.0, kernel_sum = 0.0;
  std::size_t aligned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = z.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto zj = z.row(j);
      double dist2 = 0.0, dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = zi[c] - zj[c];
        dist2 += diff * diff;
        dot += zi[c] * zj[c];
      }
      const double delta = sentiment_similarity(valences[i], valences[j]);
      if (delta >= 0.9) {
        align_sum += dist2;
        ++aligned;
      }
      kernel_sum += std::exp(-2.0 * dist2);
      deltas.push_back(delta);
      cosines.push_back(dot);
    }
  }
  CollapseDiagnostics out;
  out.n = n;
  out.aligned_pairs = aligned;
  if (aligned > 0) out.alignment = align_sum / static_cast<double>(aligned);
  out.uniformity = std::log(kernel_sum / static_cast<double>(pairs));
  try {
    out.valence_rank_corr = spearman_rho(deltas, cosines);
  } catch (const UndefinedCorrelationError&) {
    spdlog::warn("collapse_diagnostics: valence_rank_corr undefined (constant similarities or cosines)");
  }
  return out;
}

std::vector<MetricReport> to_reports(const CollapseDiagnostics& d) {
  std::vector<MetricReport> out;
  if (d.alignment) out.push_back({"alignment", *d.alignment, d.aligned_pairs});
  out.push_back({"uniformity", d.uniformity, d.n});
  if (d.valence_rank_corr) out.push_back({"valence_rank_corr", *d.valence_rank_corr, d.n});
  return out;
}

void write_metric_csv(std::ostream& out, std::span<const MetricReport> reports) {
  out << kMetricCsvHeader << '\n';
  for (const MetricReport& r : reports) out << r.metric << ',' << format_number(r.value) << ',' << r.n << '\n';
}

}  // namespace softmcl
