#include "softmcl/momentum.hpp"

#include <algorithm>
#include <string>

#include "softmcl/errors.hpp"

namespace softmcl {

MomentumQueue::MomentumQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (dim == 0) throw ParameterError("momentum queue: dimension must be positive");
}

void MomentumQueue::enqueue(const Tensor& reps, std::span<const ValenceRating> valences) {
  if (reps.rank() != 2 || reps.dim(1) != dim_ || reps.dim(0) != valences.size()) {
    throw ShapeError("momentum queue: got " + shape_str(reps.shape()) + " with " + std::to_string(valences.size()) +
                     " valences for dimension " + std::to_string(dim_));
  }
  if (capacity_ == 0) return;
  for (std::size_t r = 0; r < valences.size(); ++r) {
    if (!valences[r].present()) continue;
    const auto row = reps.row(r);
    rows_.emplace_back(row.begin(), row.end());
    valences_.push_back(valences[r]);
    if (valences_.size() > capacity_) {
      rows_.pop_front();
      valences_.pop_front();
    }
  }
}

Tensor MomentumQueue::reps() const {
  Tensor out({rows_.size(), dim_});
  for (std::size_t r = 0; r < rows_.size(); ++r) std::copy(rows_[r].begin(), rows_[r].end(), out.row(r).begin());
  return out;
}

void MomentumQueue::clear() {
  rows_.clear();
  valences_.clear();
}

void momentum_update(MomentumState& state, const EncoderParams& theta) {
  const double mu = state.mu;
  if (!(mu >= 0.0 && mu <= 1.0)) throw ParameterError("momentum: mu must lie in [0,1]");
  if (!state.params.same_shapes(theta)) throw ShapeError("momentum: key and online encoder shapes differ");
  if (mu == 1.0) return;
  for (auto& [name, t] : state.params.tensors) {
    const auto src = theta.tensors.at(name).data();
    auto dst = t.data();
    if (mu == 0.0) {
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = mu * dst[i] + (1.0 - mu) * src[i];
  }
}

ad::Var loss_momentum_cl(const ContrastiveBatch& batch, const MomentumQueue& queue, double tau) {
  if (batch.valences.empty() || (batch.valences.size() < 2 && queue.empty())) {
    throw DegenerateBatchError("momentum CL: empty candidate set");
  }
  if (!queue.empty() && queue.dim() != batch.reps.value().dim(1)) {
    throw ShapeError("momentum CL: queue dimension differs from batch representations");
  }
  return loss_soft_cl_with_extras(batch, queue.snapshot(), tau);
}

ad::Var loss_momentum_cl(const ContrastiveBatch& batch, ad::Var queue_reps, std::span<const ValenceRating> queue_valences,
                         double tau) {
  ad::Var keys = ad::detach(queue_reps);
  if (batch.valences.empty() || (batch.valences.size() < 2 && queue_valences.empty())) {
    throw DegenerateBatchError("momentum CL: empty candidate set");
  }
  ExtraCandidates extra{keys.value(), {queue_valences.begin(), queue_valences.end()}};
  return loss_soft_cl_with_extras(batch, extra, tau);
}

}  // namespace softmcl
