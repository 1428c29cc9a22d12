#pragma once

// Contrastive objectives over L2-normalized representations, the masked LM
// loss and the weighted combination of the three pre-training terms.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "softmcl/affect_data.hpp"
#include "softmcl/autodiff.hpp"

namespace softmcl {

// 1 - |y1 - y2| / (9 - 1). Throws MaskedValenceError on a sentinel input.
double sentiment_similarity(ValenceRating y1, ValenceRating y2);

enum class Granularity { word, sentence };

struct ContrastiveBatch {
  ad::Var reps;  // [m, d], normalized inside each loss
  std::vector<ValenceRating> valences;
  Granularity origin = Granularity::sentence;
};

// Off-batch candidates (e.g. a momentum queue snapshot). Never receives gradient.
struct ExtraCandidates {
  Tensor reps;  // [q, d]
  std::vector<ValenceRating> valences;
  bool empty() const noexcept { return valences.empty(); }
};

// Polarity class of a valence: +1 above the threshold, -1 below, 0 equal.
int polarity_label(ValenceRating v, double threshold = kValenceNeutral);
std::vector<int> polarity_labels(std::span<const ValenceRating> v, double threshold = kValenceNeutral);

// Self-supervised InfoNCE. Anchor i's candidates are every positives row;
// row i is its positive. `extra_negatives` [q, d] adds constant negatives.
ad::Var loss_selfsup_cl(ad::Var anchors, ad::Var positives, double tau, const Tensor* extra_negatives = nullptr);

// Supervised CL with hard labels. A(i) = all rows except i (plus extras);
// P(i) = rows sharing i's label. Anchors without positives contribute 0;
// DegenerateBatchError when every anchor is skipped.
ad::Var loss_supervised_cl(ad::Var reps, std::span<const int> labels, double tau,
                           const Tensor* extra_reps = nullptr, std::span<const int> extra_labels = {});

// Soft sentiment CL: cross-entropy between row-normalized valence
// similarities and the softmax over cosine logits. The anchor is excluded
// from its own candidate set; anchors whose similarities sum to 0 contribute 0.
ad::Var loss_soft_cl(const ContrastiveBatch& batch, double tau);

// Same objective with `extra` appended to every anchor's candidate set.
ad::Var loss_soft_cl_with_extras(const ContrastiveBatch& batch, const ExtraCandidates& extra, double tau);

// Target weights of the soft objective, [m, m + q] row-major (self entries 0).
std::vector<double> soft_target_weights(std::span<const ValenceRating> batch, std::span<const ValenceRating> extra);

struct MlmLoss {
  ad::Var value;
  bool no_targets = false;
};

// Mean cross-entropy over masked positions. Zero targets yields 0 and sets no_targets.
MlmLoss loss_mlm(ad::Var logits, std::span<const std::uint32_t> targets);

struct LossParts {
  double mlm = 0.0;
  double word_mcl = 0.0;
  double sent_mcl = 0.0;
};

struct LossBreakdown {
  double mlm = 0.0;
  double word_mcl = 0.0;
  double sent_mcl = 0.0;
  double total = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

inline constexpr double kDefaultLambda1 = 0.25;
inline constexpr double kDefaultLambda2 = 0.25;

// total = mlm + lambda1 * word_mcl + lambda2 * sent_mcl
LossBreakdown loss_combined(const LossParts& parts, double lambda1 = kDefaultLambda1,
                            double lambda2 = kDefaultLambda2);

// Differentiable counterpart of loss_combined, evaluated in the same order.
ad::Var combine_losses(ad::Var mlm, ad::Var word_mcl, ad::Var sent_mcl, double lambda1, double lambda2);

}  // namespace softmcl
