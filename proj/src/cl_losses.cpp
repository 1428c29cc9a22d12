#include "softmcl/cl_losses.hpp"

#include <cmath>
#include <spdlog/spdlog.h>
#include <string>

#include "softmcl/errors.hpp"

namespace softmcl {

namespace {

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be positive, got " + std::to_string(tau));
}

void require_rows(const ad::Var& reps, std::size_t expected, const char* what) {
  if (reps.value().rank() != 2 || reps.value().dim(0) != expected) {
    throw ShapeError(std::string(what) + ": representation shape " + shape_str(reps.shape()) + " vs " +
                     std::to_string(expected) + " rows");
  }
}

// norm(a) . [norm(b); norm(extra)]^T / tau -> [m, n + q]
ad::Var cosine_logits(ad::Var a, ad::Var b, const Tensor* extra, double tau) {
  ad::Var za = ad::l2_normalize(a, 1);
  ad::Var zb = a.id() == b.id() ? za : ad::l2_normalize(b, 1);
  if (extra != nullptr && extra->size() > 0) {
    if (extra->rank() != 2 || extra->dim(1) != a.value().dim(1)) {
      throw ShapeError("contrastive loss: extra candidates " + shape_str(extra->shape()) + " vs reps " +
                       shape_str(a.shape()));
    }
    ad::Var ze = ad::l2_normalize(a.tape().constant(*extra), 1);
    zb = ad::concat(zb, ze, 0);
  }
  return ad::scale(ad::matmul(za, ad::transpose(zb)), 1.0 / tau);
}

}  // namespace

double sentiment_similarity(ValenceRating y1, ValenceRating y2) {
  if (!y1.present() || !y2.present()) throw MaskedValenceError("sentiment_similarity: masked (0) valence");
  return 1.0 - std::abs(y1.value() - y2.value()) / (kValenceMax - kValenceMin);
}

int polarity_label(ValenceRating v, double threshold) {
  if (!v.present()) throw MaskedValenceError("polarity_label: masked (0) valence");
  if (v.value() > threshold) return 1;
  if (v.value() < threshold) return -1;
  return 0;
}

std::vector<int> polarity_labels(std::span<const ValenceRating> v, double threshold) {
  std::vector<int> out;
  out.reserve(v.size());
  for (ValenceRating r : v) out.push_back(polarity_label(r, threshold));
  return out;
}

ad::Var loss_selfsup_cl(ad::Var anchors, ad::Var positives, double tau, const Tensor* extra_negatives) {
  require_tau(tau);
  if (anchors.value().rank() != 2) throw ShapeError("loss_selfsup_cl: anchors must be [m, d]");
  const std::size_t m = anchors.value().dim(0);
  require_rows(positives, m, "loss_selfsup_cl");
  if (positives.value().dim(1) != anchors.value().dim(1)) {
    throw ShapeError("loss_selfsup_cl: shape mismatch " + shape_str(anchors.shape()) + " vs " + shape_str(positives.shape()));
  }
  if (m == 0) throw DegenerateBatchError("loss_selfsup_cl: empty batch");
  ad::Var logits = cosine_logits(anchors, positives, extra_negatives, tau);
  const std::size_t c = logits.value().dim(1);
  std::vector<std::uint8_t> mask(m * c, 1);
  std::vector<double> w(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) w[i * c + i] = 1.0;
  return ad::masked_soft_cross_entropy(logits, mask, w);
}

ad::Var loss_supervised_cl(ad::Var reps, std::span<const int> labels, double tau, const Tensor* extra_reps,
                           std::span<const int> extra_labels) {
  require_tau(tau);
  const std::size_t m = labels.size();
  require_rows(reps, m, "loss_supervised_cl");
  const std::size_t q = extra_reps != nullptr ? extra_reps->rows() : 0;
  if (q != extra_labels.size()) throw ShapeError("loss_supervised_cl: extra labels/reps mismatch");
  ad::Var logits = cosine_logits(reps, reps, extra_reps, tau);
  const std::size_t c = m + q;
  std::vector<std::uint8_t> mask(m * c, 1);
  std::vector<double> w(m * c, 0.0);
  const auto label_of = [&](std::size_t j) { return j < m ? labels[j] : extra_labels[j - m]; };
  std::size_t active = 0;
  for (std::size_t i = 0; i < m; ++i) {
    mask[i * c + i] = 0;
    std::size_t positives = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j != i && label_of(j) == labels[i]) ++positives;
    }
    if (positives == 0) continue;
    ++active;
    for (std::size_t j = 0; j < c; ++j) {
      if (j != i && label_of(j) == labels[i]) w[i * c + j] = 1.0 / static_cast<double>(positives);
    }
  }
  if (active == 0) throw DegenerateBatchError("loss_supervised_cl: no anchor has a positive");
  return ad::masked_soft_cross_entropy(logits, mask, w);
}

std::vector<double> soft_target_weights(std::span<const ValenceRating> batch, std::span<const ValenceRating> extra) {
  const std::size_t m = batch.size(), c = batch.size() + extra.size();
  std::vector<double> w(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == i) continue;
      const double delta = sentiment_similarity(batch[i], j < m ? batch[j] : extra[j - m]);
      w[i * c + j] = delta;
      total += delta;
    }
    if (total == 0.0) continue;
    for (std::size_t j = 0; j < c; ++j) w[i * c + j] /= total;
  }
  return w;
}

ad::Var loss_soft_cl_with_extras(const ContrastiveBatch& batch, const ExtraCandidates& extra, double tau) {
  require_tau(tau);
  const std::size_t m = batch.valences.size();
  require_rows(batch.reps, m, "loss_soft_cl");
  if (extra.reps.rows() != extra.valences.size() && !(extra.valences.empty() && extra.reps.empty())) {
    throw ShapeError("loss_soft_cl: extra candidate reps/valences mismatch");
  }
  const std::size_t q = extra.valences.size();
  if (m + q < 2 || m == 0) throw DegenerateBatchError("soft contrastive loss needs at least two candidates");
  for (ValenceRating v : batch.valences) {
    if (!v.present()) throw MaskedValenceError("soft contrastive loss: masked (0) valence in batch");
  }
  for (ValenceRating v : extra.valences) {
    if (!v.present()) throw MaskedValenceError("soft contrastive loss: masked (0) valence in extra candidates");
  }
  ad::Var logits = cosine_logits(batch.reps, batch.reps, q > 0 ? &extra.reps : nullptr, tau);
  const std::size_t c = m + q;
  std::vector<std::uint8_t> mask(m * c, 1);
  for (std::size_t i = 0; i < m; ++i) mask[i * c + i] = 0;
  const std::vector<double> w = soft_target_weights(batch.valences, extra.valences);
  return ad::masked_soft_cross_entropy(logits, mask, w);
}

ad::Var loss_soft_cl(const ContrastiveBatch& batch, double tau) {
  if (batch.valences.size() < 2) throw DegenerateBatchError("loss_soft_cl: batch needs at least 2 rows");
  return loss_soft_cl_with_extras(batch, ExtraCandidates{}, tau);
}

MlmLoss loss_mlm(ad::Var logits, std::span<const std::uint32_t> targets) {
  const Tensor& l = logits.value();
  if (l.rank() != 2 || l.dim(0) != targets.size()) {
    throw ShapeError("loss_mlm: logits " + shape_str(l.shape()) + " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = targets.size();
  if (n == 0) {
    spdlog::debug("loss_mlm: no masked positions, contributing 0");
    return MlmLoss{logits.tape().constant(Tensor::scalar(0.0)), true};
  }
  const std::size_t v = l.dim(1);
  std::vector<std::uint8_t> mask(n * v, 1);
  std::vector<double> w(n * v, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= v) throw VocabularyError("loss_mlm: target id out of range");
    w[i * v + targets[i]] = 1.0 / static_cast<double>(n);
  }
  return MlmLoss{ad::masked_soft_cross_entropy(logits, mask, w), false};
}

LossBreakdown loss_combined(const LossParts& parts, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ParameterError("loss weights must be non-negative");
  LossBreakdown b;
  b.mlm = parts.mlm;
  b.word_mcl = parts.word_mcl;
  b.sent_mcl = parts.sent_mcl;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = parts.mlm + lambda1 * parts.word_mcl + lambda2 * parts.sent_mcl;
  return b;
}

ad::Var combine_losses(ad::Var mlm, ad::Var word_mcl, ad::Var sent_mcl, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ParameterError("loss weights must be non-negative");
  return ad::add(ad::add(mlm, ad::scale(word_mcl, lambda1)), ad::scale(sent_mcl, lambda2));
}

}  // namespace softmcl
