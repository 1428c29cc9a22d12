#include "softmcl/encoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <type_traits>

#include "softmcl/errors.hpp"
#include "softmcl/rng.hpp"

namespace softmcl {

namespace {

constexpr double kInitStd = 0.02;

std::string layer_name(std::size_t layer, const char* leaf) { return "layer" + std::to_string(layer) + "/" + leaf; }

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { normal, zeros, ones } init;
};

std::vector<ParamSpec> param_specs(const EncoderConfig& c) {
  using I = ParamSpec::Init;
  const std::size_t d = c.hidden_dim, f = c.ffn_dim;
  std::vector<ParamSpec> specs = {
      {"embed/token", {c.vocab_size, d}, I::normal},
      {"embed/position", {c.max_len, d}, I::normal},
      {"final_ln/gain", {d}, I::ones},
      {"final_ln/bias", {d}, I::zeros},
      {"mlm_head/bias", {c.vocab_size}, I::zeros},
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (const char* w : {"attn/wq", "attn/wk", "attn/wv", "attn/wo"}) specs.push_back({layer_name(l, w), {d, d}, I::normal});
    // No key bias: it shifts every score in a query row equally, so softmax cancels it.
    for (const char* b : {"attn/bq", "attn/bv", "attn/bo"}) specs.push_back({layer_name(l, b), {d}, I::zeros});
    specs.push_back({layer_name(l, "ln1/gain"), {d}, I::ones});
    specs.push_back({layer_name(l, "ln1/bias"), {d}, I::zeros});
    specs.push_back({layer_name(l, "ln2/gain"), {d}, I::ones});
    specs.push_back({layer_name(l, "ln2/bias"), {d}, I::zeros});
    specs.push_back({layer_name(l, "ffn/w1"), {d, f}, I::normal});
    specs.push_back({layer_name(l, "ffn/b1"), {f}, I::zeros});
    specs.push_back({layer_name(l, "ffn/w2"), {f, d}, I::normal});
    specs.push_back({layer_name(l, "ffn/b2"), {d}, I::zeros});
  }
  std::sort(specs.begin(), specs.end(), [](const ParamSpec& a, const ParamSpec& b) { return a.name < b.name; });
  return specs;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= Vocabulary::kReserved) throw ParameterError("encoder: vocab_size must exceed the reserved ids");
  if (hidden_dim == 0 || n_heads == 0 || hidden_dim % n_heads != 0) {
    throw ParameterError("encoder: hidden_dim must be a positive multiple of n_heads");
  }
  if (ffn_dim == 0) throw ParameterError("encoder: ffn_dim must be positive");
  if (max_len < 2) throw ParameterError("encoder: max_len must be at least 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("encoder: dropout must be in [0,1)");
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

bool EncoderParams::same_shapes(const EncoderParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  auto it = other.tensors.begin();
  for (const auto& [name, t] : tensors) {
    if (it->first != name || it->second.shape() != t.shape()) return false;
    ++it;
  }
  return true;
}

std::size_t expected_parameter_count(const EncoderConfig& config) {
  std::size_t n = 0;
  for (const ParamSpec& s : param_specs(config)) n += shape_numel(s.shape);
  return n;
}

EncoderParams init_params(const EncoderConfig& config) {
  config.validate();
  EncoderParams p;
  p.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (const ParamSpec& s : param_specs(config)) {
    Tensor t(s.shape, 0.0);
    switch (s.init) {
      case ParamSpec::Init::normal:
        for (double& v : t.data()) v = normal(rng);
        break;
      case ParamSpec::Init::ones:
        for (double& v : t.data()) v = 1.0;
        break;
      case ParamSpec::Init::zeros:
        break;
    }
    p.tensors.emplace(s.name, std::move(t));
  }
  return p;
}

EncoderParams clone_params(const EncoderParams& params) { return params; }

TokenBatch make_token_batch(std::span<const TokenizedSentence* const> sentences) {
  TokenBatch b;
  b.batch = sentences.size();
  for (const TokenizedSentence* s : sentences) b.seq = std::max(b.seq, s->size());
  b.ids.assign(b.batch * b.seq, Vocabulary::kPad);
  b.mask.assign(b.batch * b.seq, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const TokenizedSentence& s = *sentences[i];
    for (std::size_t j = 0; j < s.size(); ++j) {
      b.ids[i * b.seq + j] = s.token_ids[j];
      b.mask[i * b.seq + j] = 1;
    }
  }
  return b;
}

TokenBatch make_token_batch(std::span<const TokenizedSentence> sentences) {
  std::vector<const TokenizedSentence*> ptrs;
  ptrs.reserve(sentences.size());
  for (const TokenizedSentence& s : sentences) ptrs.push_back(&s);
  return make_token_batch(std::span<const TokenizedSentence* const>(ptrs));
}

BoundParams bind_params(ad::Tape& tape, const EncoderParams& params, bool trainable) {
  BoundParams b;
  b.config = &params.config;
  for (const auto& [name, t] : params.tensors) {
    b.vars.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
  }
  return b;
}

EncodedBatch encode(const BoundParams& params, const TokenBatch& batch, bool train_mode, std::uint64_t dropout_stream) {
  const EncoderConfig& cfg = *params.config;
  if (batch.ids.size() != batch.batch * batch.seq || batch.mask.size() != batch.ids.size()) {
    throw ShapeError("encode: token batch shape mismatch");
  }
  if (batch.batch == 0 || batch.seq == 0) throw ShapeError("encode: empty batch");
  if (batch.seq > cfg.max_len) {
    throw LengthError("encode: sequence length " + std::to_string(batch.seq) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
  }
  const std::size_t n = batch.batch * batch.seq;
  std::vector<std::size_t> ids(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.ids[i] >= cfg.vocab_size) {
      throw VocabularyError("encode: token id " + std::to_string(batch.ids[i]) + " >= vocab_size " +
                            std::to_string(cfg.vocab_size));
    }
    ids[i] = batch.ids[i];
    positions[i] = i % batch.seq;
  }
  const double rate = train_mode ? cfg.dropout : 0.0;
  std::uint64_t drop_counter = 0;
  const auto drop = [&](ad::Var v) {
    return ad::dropout(v, rate, mix_seed(mix_seed(cfg.seed, dropout_stream), drop_counter++));
  };

  ad::Var x = ad::add(ad::gather_rows(params.at("embed/token"), ids), ad::gather_rows(params.at("embed/position"), positions));
  x = drop(x);
  const auto linear = [&](ad::Var in, std::size_t l, const char* w, const char* b) {
    return ad::add_bias(ad::matmul(in, params.at(layer_name(l, w))), params.at(layer_name(l, b)));
  };
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    ad::Var h = ad::layer_norm(x, params.at(layer_name(l, "ln1/gain")), params.at(layer_name(l, "ln1/bias")));
    ad::Var q = linear(h, l, "attn/wq", "attn/bq");
    ad::Var k = ad::matmul(h, params.at(layer_name(l, "attn/wk")));
    ad::Var v = linear(h, l, "attn/wv", "attn/bv");
    ad::Var a = ad::multi_head_attention(q, k, v, batch.batch, batch.seq, cfg.n_heads, batch.mask);
    x = ad::add(x, drop(linear(a, l, "attn/wo", "attn/bo")));
    ad::Var h2 = ad::layer_norm(x, params.at(layer_name(l, "ln2/gain")), params.at(layer_name(l, "ln2/bias")));
    ad::Var f = ad::gelu(linear(h2, l, "ffn/w1", "ffn/b1"));
    x = ad::add(x, drop(linear(f, l, "ffn/w2", "ffn/b2")));
  }
  x = ad::layer_norm(x, params.at("final_ln/gain"), params.at("final_ln/bias"));

  EncodedBatch out;
  out.batch = batch.batch;
  out.seq = batch.seq;
  out.attention_mask = batch.mask;
  out.flat = x;
  out.hidden = ad::reshape(x, Shape{batch.batch, batch.seq, cfg.hidden_dim});
  std::vector<std::size_t> cls_rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) cls_rows[b] = b * batch.seq;
  out.cls = ad::gather_rows(x, cls_rows);
  return out;
}

ad::Var mlm_logits(const BoundParams& params, const ad::Var& flat_hidden, std::span<const std::size_t> rows) {
  ad::Var h = ad::gather_rows(flat_hidden, rows);
  ad::Var logits = ad::matmul(h, ad::transpose(params.at("embed/token")));
  return ad::add_bias(logits, params.at("mlm_head/bias"));
}

// ---- checkpoint I/O -----------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U u;
  std::memcpy(&u, &v, sizeof u);
  for (std::size_t i = 0; i < sizeof u; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  bool done() const { return pos_ == data_.size(); }

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof u; ++i) u |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof u;
    T v;
    std::memcpy(&v, &u, sizeof v);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'S', 'M', 'C', 'L'};

}  // namespace

void write_named_arrays(const std::filesystem::path& path, const NamedArrays& arrays) {
  std::string buf(kMagic, 4);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  for (const auto& [name, t] : arrays) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_le<double>(buf, v);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedArrays read_named_arrays(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8 || data.compare(0, 4, kMagic, 4) != 0) throw FormatError("not a SMCL checkpoint: " + path.string());
  Reader r(data);
  r.bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  NamedArrays arrays;
  std::string prev;
  while (!r.done()) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.bytes(name_len);
    if (!arrays.empty() && name <= prev) throw FormatError("checkpoint records out of order at '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor t(shape, 0.0);
    for (double& v : t.data()) v = r.get<double>();
    prev = name;
    arrays.emplace(std::move(name), std::move(t));
  }
  return arrays;
}

void export_params(const EncoderParams& params, const std::string& prefix, NamedArrays& out) {
  for (const auto& [name, t] : params.tensors) out[prefix + name] = t;
}

EncoderParams import_params(const EncoderConfig& config, const std::string& prefix, const NamedArrays& arrays) {
  EncoderParams p;
  p.config = config;
  for (const ParamSpec& s : param_specs(config)) {
    const auto it = arrays.find(prefix + s.name);
    if (it == arrays.end()) throw FormatError("checkpoint missing array '" + prefix + s.name + "'");
    if (it->second.shape() != s.shape) {
      throw FormatError("checkpoint array '" + prefix + s.name + "' has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(s.shape));
    }
    p.tensors.emplace(s.name, it->second);
  }
  return p;
}

Tensor encoder_config_array(const EncoderConfig& c) {
  return Tensor::vector({static_cast<double>(c.vocab_size), static_cast<double>(c.hidden_dim),
                         static_cast<double>(c.n_layers), static_cast<double>(c.n_heads),
                         static_cast<double>(c.ffn_dim), static_cast<double>(c.max_len), c.dropout,
                         static_cast<double>(c.seed >> 32), static_cast<double>(c.seed & 0xffffffffULL)});
}

EncoderConfig encoder_config_from_array(const Tensor& a) {
  if (a.shape() != Shape{9}) throw FormatError("encoder config array has shape " + shape_str(a.shape()));
  EncoderConfig c;
  c.vocab_size = static_cast<std::size_t>(a[0]);
  c.hidden_dim = static_cast<std::size_t>(a[1]);
  c.n_layers = static_cast<std::size_t>(a[2]);
  c.n_heads = static_cast<std::size_t>(a[3]);
  c.ffn_dim = static_cast<std::size_t>(a[4]);
  c.max_len = static_cast<std::size_t>(a[5]);
  c.dropout = a[6];
  c.seed = (static_cast<std::uint64_t>(a[7]) << 32) | static_cast<std::uint64_t>(a[8]);
  return c;
}

}  // namespace softmcl
