#pragma once

// Minimal pre-norm transformer encoder. Maps padded token-id batches to
// per-token hidden vectors and a sentence vector taken at the CLS position.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "softmcl/affect_data.hpp"
#include "softmcl/autodiff.hpp"
#include "softmcl/tensor.hpp"

namespace softmcl {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 128;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return hidden_dim / n_heads; }
  // Throws ParameterError on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Named parameter tensors (θ). Names are unique and ordered.
struct EncoderParams {
  EncoderConfig config;
  std::map<std::string, Tensor> tensors;

  std::size_t parameter_count() const;
  const Tensor& at(const std::string& name) const { return tensors.at(name); }
  bool same_shapes(const EncoderParams& other) const;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

// Seeded N(0, 0.02) weights and embeddings; zero biases; unit layer-norm gains.
EncoderParams init_params(const EncoderConfig& config);
EncoderParams clone_params(const EncoderParams& params);
// Parameter count implied by the configuration alone.
std::size_t expected_parameter_count(const EncoderConfig& config);

// Padded token-id matrix with a validity mask, both [batch, seq] row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::uint8_t> mask;
};

// Pads to the longest sentence with PAD ids.
TokenBatch make_token_batch(std::span<const TokenizedSentence> sentences);
TokenBatch make_token_batch(std::span<const TokenizedSentence* const> sentences);

// Parameters placed on a tape, either as trainable variables or constants.
struct BoundParams {
  const EncoderConfig* config = nullptr;
  std::map<std::string, ad::Var> vars;
  const ad::Var& at(const std::string& name) const { return vars.at(name); }
};

BoundParams bind_params(ad::Tape& tape, const EncoderParams& params, bool trainable);

struct EncodedBatch {
  ad::Var hidden;  // [batch, seq, hidden_dim]
  ad::Var flat;    // same values viewed as [batch*seq, hidden_dim]
  ad::Var cls;     // [batch, hidden_dim], row b == hidden[b, 0, :]
  std::vector<std::uint8_t> attention_mask;
  std::size_t batch = 0;
  std::size_t seq = 0;
};

// Dropout is applied only when train_mode is set; its stream is seeded by
// config.seed mixed with dropout_stream.
EncodedBatch encode(const BoundParams& params, const TokenBatch& batch, bool train_mode,
                    std::uint64_t dropout_stream = 0);

// MLM logits for selected rows of the flat hidden matrix: tied token
// embeddings plus an output bias. [rows.size(), vocab_size]
ad::Var mlm_logits(const BoundParams& params, const ad::Var& flat_hidden, std::span<const std::size_t> rows);

// ---- named-array checkpoint format ----------------------------------------
// magic "SMCL", version u32, then records
//   [name_len u32, name, rank u32, dims u32 x rank, f64 LE x prod(dims)]
// in name order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedArrays = std::map<std::string, Tensor>;

void write_named_arrays(const std::filesystem::path& path, const NamedArrays& arrays);
// Throws FormatError on bad magic/version or truncated data.
NamedArrays read_named_arrays(const std::filesystem::path& path);

// Parameters under `prefix` ("params/", "momentum/", ...).
void export_params(const EncoderParams& params, const std::string& prefix, NamedArrays& out);
EncoderParams import_params(const EncoderConfig& config, const std::string& prefix, const NamedArrays& arrays);

Tensor encoder_config_array(const EncoderConfig& config);
EncoderConfig encoder_config_from_array(const Tensor& array);

}  // namespace softmcl
