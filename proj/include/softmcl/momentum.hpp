#pragma once

// Momentum (key) encoder maintenance and the FIFO queue of off-batch
// sentence representations used as extra contrastive candidates.

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "softmcl/affect_data.hpp"
#include "softmcl/autodiff.hpp"
#include "softmcl/cl_losses.hpp"
#include "softmcl/encoder.hpp"
#include "softmcl/tensor.hpp"

namespace softmcl {

class MomentumQueue {
 public:
  MomentumQueue() = default;
  MomentumQueue(std::size_t capacity, std::size_t dim);

  // Appends rows in order, skipping sentinel-valence rows, evicting the
  // oldest entries beyond capacity. Throws ShapeError on a dimension mismatch.
  void enqueue(const Tensor& reps, std::span<const ValenceRating> valences);

  std::size_t size() const noexcept { return valences_.size(); }
  bool empty() const noexcept { return valences_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }

  // Oldest first.
  Tensor reps() const;
  std::vector<ValenceRating> valences() const { return {valences_.begin(), valences_.end()}; }
  ExtraCandidates snapshot() const { return ExtraCandidates{reps(), valences()}; }

  void clear();

  friend bool operator==(const MomentumQueue&, const MomentumQueue&) = default;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::deque<std::vector<double>> rows_;
  std::deque<ValenceRating> valences_;
};

struct MomentumState {
  EncoderParams params;
  double mu = 0.9;
};

// Elementwise params <- mu * params + (1 - mu) * theta. mu == 1 leaves the
// key encoder bitwise unchanged and mu == 0 copies theta bitwise.
void momentum_update(MomentumState& state, const EncoderParams& theta);

// Soft CL where every anchor's candidates are the other batch rows plus all
// queue rows. Queue rows are constants on the tape.
ad::Var loss_momentum_cl(const ContrastiveBatch& batch, const MomentumQueue& queue, double tau);

// Variant taking queue rows that live on the tape; they are detached first,
// so no gradient ever reaches them.
ad::Var loss_momentum_cl(const ContrastiveBatch& batch, ad::Var queue_reps, std::span<const ValenceRating> queue_valences,
                         double tau);

}  // namespace softmcl
