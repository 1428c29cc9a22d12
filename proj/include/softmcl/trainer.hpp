#pragma once

// Pre-training loop: batching, masking, affective-token sampling, the three
// loss terms, AdamW with a linear schedule, the momentum encoder and queue,
// checkpoints and the CSV training log.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "softmcl/affect_data.hpp"
#include "softmcl/cl_losses.hpp"
#include "softmcl/csv.hpp"
#include "softmcl/encoder.hpp"
#include "softmcl/momentum.hpp"

namespace softmcl {

// soft: valence-weighted CL; hard: polarity-label CL; selfsup: two masked
// views, no labels; mlm_only: no contrastive terms at all.
enum class TrainMode { soft, hard, selfsup, mlm_only };

std::string to_string(TrainMode mode);
// Throws ParameterError on an unknown name.
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr = 2e-5;
  double warmup_fraction = 0.10;
  std::size_t total_steps = 20000;
  double tau = 0.1;
  double mu = 0.9;
  std::size_t queue_capacity = 1024;
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
  double mask_rate = 0.15;
  double affective_mask_rate = 0.30;
  std::size_t word_cl_sample = 256;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::soft;
  double polarity_threshold = kValenceNeutral;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_every = 0;

  std::size_t hidden_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 128;
  double dropout = 0.0;
  std::size_t min_count = 1;

  std::size_t warmup_steps() const;
  EncoderConfig encoder_config(std::size_t vocab_size) const;
  // Throws ParameterError on out-of-range values.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// key=value assignment by field name. Throws ParameterError on an unknown
// key or an unparsable value.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
// "key=value" form of apply_setting.
void apply_setting(TrainConfig& config, const std::string& assignment);
// key=value lines, `#` comments and blank lines ignored.
TrainConfig parse_train_config(std::istream& in, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& config);

// Linear warmup to config.lr at warmup_steps(), then linear decay to 0 at
// total_steps. `step` is 1-based.
double learning_rate(const TrainConfig& config, std::size_t step);

struct MaskTarget {
  std::size_t sentence = 0;
  std::size_t position = 0;
  std::uint32_t original = 0;
};

struct MaskedBatch {
  std::vector<TokenizedSentence> sentences;
  std::vector<MaskTarget> targets;
};

// Two passes: every non-special token with probability mask_rate, then every
// still-unmasked affective token with probability affective_mask_rate. Chosen
// positions become MASK (80%), a random regular id (10%) or stay (10%).
MaskedBatch apply_masking(std::span<const TokenizedSentence> batch, double mask_rate, double affective_mask_rate,
                          std::size_t vocab_size, std::mt19937_64& rng);

struct AffectiveSample {
  ContrastiveBatch batch;
  std::vector<std::size_t> positions;  // rows of the flat hidden matrix
  bool skipped = false;                // fewer than two positions available
};

// Uniform sample without replacement of up to k flat positions whose valence
// is present. `flat_valences` is aligned with encoded.flat rows.
AffectiveSample sample_affective_tokens(const EncodedBatch& encoded, std::span<const ValenceRating> flat_valences,
                                        std::size_t k, std::mt19937_64& rng);

struct TrainLogRecord {
  std::size_t step = 0;
  double mlm = 0.0;
  double word_mcl = 0.0;
  double sent_mcl = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::size_t queue_len = 0;

  friend bool operator==(const TrainLogRecord&, const TrainLogRecord&) = default;
};

struct TrainState {
  TrainConfig config;
  EncoderParams params;
  MomentumState momentum;
  MomentumQueue queue;
  NamedArrays adam_m;
  NamedArrays adam_v;
  std::size_t step = 0;  // completed steps
  std::uint64_t vocab_hash = 0;
};

TrainState init_train_state(const TrainConfig& config, std::size_t vocab_size, std::uint64_t vocab_hash);

struct TrainingData {
  Vocabulary vocab;
  Lexicon lexicon;
  std::vector<TokenizedSentence> word_corpus;
  std::vector<TokenizedSentence> sent_corpus;
};

// Builds the vocabulary over both corpora and tokenizes them. In selfsup mode
// the lexicon is ignored.
TrainingData prepare_training_data(const Lexicon& lexicon, const std::vector<AnnotatedSentence>& word_corpus,
                                   const std::vector<AnnotatedSentence>& sent_corpus, const TrainConfig& config);

struct StepBatches {
  std::vector<const TokenizedSentence*> word;
  std::vector<const TokenizedSentence*> sent;
};

// Batches for a 1-based step, a pure function of (seed, step).
StepBatches draw_batches(const TrainingData& data, const TrainConfig& config, std::size_t step);

// Runs one optimization step (state.step + 1). Throws TrainingDivergedError
// on a non-finite loss, leaving the state untouched.
TrainLogRecord train_step(TrainState& state, std::span<const TokenizedSentence* const> word_batch,
                          std::span<const TokenizedSentence* const> sent_batch, std::size_t vocab_size);

using StepCallback = std::function<void(const TrainLogRecord&, const TrainState&)>;

// Steps until state.step == stop_at (capped at total_steps).
void run_training(TrainState& state, const TrainingData& data, std::size_t stop_at, const StepCallback& on_step = {});

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
// Restores the encoder config, mu, parameters, optimizer moments, queue and
// step; remaining fields of `config` are taken from the argument. Throws
// FormatError on a damaged file.
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config);

inline constexpr const char* kTrainLogHeader = "step,mlm,word_mcl,sent_mcl,total,lr,queue_len";

std::string format_log_record(const TrainLogRecord& r);
std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path);

// Raw CLS vectors of `sentences` under `params`, no dropout. [n, hidden_dim]
Tensor sentence_embeddings(const EncoderParams& params, std::span<const TokenizedSentence> sentences,
                           std::size_t batch_size = 64);

}  // namespace softmcl
