#include "softmcl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <spdlog/spdlog.h>
#include <system_error>

#include "softmcl/errors.hpp"
#include "softmcl/rng.hpp"

namespace softmcl {

namespace {

// Purposes mixed into (seed, step) to get independent per-step streams.
enum Stream : std::uint64_t {
  kWordBatch = 1,
  kSentBatch = 2,
  kWordMask = 3,
  kWordSample = 4,
  kWordViewB = 5,
  kSentViewA = 6,
  kSentViewB = 7,
  kDropWord = 8,
  kDropWordB = 9,
  kDropSent = 10,
  kDropSentB = 11,
};

std::mt19937_64 stream_rng(std::uint64_t seed, std::size_t step, Stream purpose) {
  return std::mt19937_64(mix_seed(seed, step, purpose));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParameterError("config: bad value '" + text + "' for " + key);
  return v;
}

bool is_special(std::uint32_t id) { return id < Vocabulary::kReserved && id != Vocabulary::kUnk; }

// k distinct indices out of [0, n), sorted; all of them when n <= k.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= k) return idx;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Flat per-position valences of a padded batch; CLS and padding are absent.
std::vector<ValenceRating> flat_token_valences(std::span<const TokenizedSentence* const> batch, std::size_t seq,
                                               bool any_token) {
  std::vector<ValenceRating> out(batch.size() * seq);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TokenizedSentence& s = *batch[b];
    for (std::size_t j = 1; j < s.size(); ++j) {
      if (any_token) {
        if (!is_special(s.token_ids[j])) out[b * seq + j] = ValenceRating(kValenceNeutral);
      } else {
        out[b * seq + j] = s.token_valences[j];
      }
    }
  }
  return out;
}

void normalize_rows(Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    double ss = 0.0;
    for (double x : row) ss += x * x;
    const double n = std::max(std::sqrt(ss), 1e-12);
    for (double& x : row) x /= n;
  }
}

std::string dump_batch(std::span<const TokenizedSentence* const> batch) {
  std::ostringstream os;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    os << "\n  [" << b << "]";
    for (std::uint32_t id : batch[b]->token_ids) os << ' ' << id;
  }
  return os.str();
}

struct Setting {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Setting field(T TrainConfig::*member) {
  return Setting{[member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_value<T>(k, v); },
                 [member](const TrainConfig& c) {
                   if constexpr (std::is_floating_point_v<T>) {
                     return format_number(c.*member);
                   } else {
                     return std::to_string(c.*member);
                   }
                 }};
}

const std::map<std::string, Setting>& settings() {
  static const std::map<std::string, Setting> table = {
      {"batch_size", field(&TrainConfig::batch_size)},
      {"lr", field(&TrainConfig::lr)},
      {"warmup_fraction", field(&TrainConfig::warmup_fraction)},
      {"total_steps", field(&TrainConfig::total_steps)},
      {"tau", field(&TrainConfig::tau)},
      {"mu", field(&TrainConfig::mu)},
      {"queue_capacity", field(&TrainConfig::queue_capacity)},
      {"lambda1", field(&TrainConfig::lambda1)},
      {"lambda2", field(&TrainConfig::lambda2)},
      {"mask_rate", field(&TrainConfig::mask_rate)},
      {"affective_mask_rate", field(&TrainConfig::affective_mask_rate)},
      {"word_cl_sample", field(&TrainConfig::word_cl_sample)},
      {"seed", field(&TrainConfig::seed)},
      {"mode", Setting{[](TrainConfig& c, const std::string&, const std::string& v) { c.mode = parse_train_mode(v); },
                       [](const TrainConfig& c) { return to_string(c.mode); }}},
      {"polarity_threshold", field(&TrainConfig::polarity_threshold)},
      {"weight_decay", field(&TrainConfig::weight_decay)},
      {"beta1", field(&TrainConfig::beta1)},
      {"beta2", field(&TrainConfig::beta2)},
      {"adam_eps", field(&TrainConfig::adam_eps)},
      {"checkpoint_every", field(&TrainConfig::checkpoint_every)},
      {"hidden_dim", field(&TrainConfig::hidden_dim)},
      {"n_layers", field(&TrainConfig::n_layers)},
      {"n_heads", field(&TrainConfig::n_heads)},
      {"ffn_dim", field(&TrainConfig::ffn_dim)},
      {"max_len", field(&TrainConfig::max_len)},
      {"dropout", field(&TrainConfig::dropout)},
      {"min_count", field(&TrainConfig::min_count)},
  };
  return table;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::soft: return "soft";
    case TrainMode::hard: return "hard";
    case TrainMode::selfsup: return "selfsup";
    case TrainMode::mlm_only: return "mlm_only";
  }
  return "soft";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "soft") return TrainMode::soft;
  if (name == "hard") return TrainMode::hard;
  if (name == "selfsup") return TrainMode::selfsup;
  if (name == "mlm_only") return TrainMode::mlm_only;
  throw ParameterError("unknown training mode '" + name + "' (soft|hard|selfsup|mlm_only)");
}

std::size_t TrainConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

EncoderConfig TrainConfig::encoder_config(std::size_t vocab_size) const {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.hidden_dim = hidden_dim;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.ffn_dim = ffn_dim;
  c.max_len = max_len;
  c.dropout = dropout;
  c.seed = seed;
  return c;
}

void TrainConfig::validate() const {
  const auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError(std::string(name) + " must lie in [0,1]");
  };
  unit(warmup_fraction, "warmup_fraction");
  unit(mu, "mu");
  unit(mask_rate, "mask_rate");
  unit(affective_mask_rate, "affective_mask_rate");
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  if (total_steps == 0) throw ParameterError("total_steps must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("lr must be non-negative");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ParameterError("lambda1/lambda2 must be non-negative");
  if (word_cl_sample < 2) throw ParameterError("word_cl_sample must be at least 2");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be positive");
  encoder_config(Vocabulary::kReserved + 1).validate();
}

void apply_setting(TrainConfig& config, const std::string& key, const std::string& value) {
  const auto it = settings().find(key);
  if (it == settings().end()) throw ParameterError("unknown config key '" + key + "'");
  it->second.set(config, key, value);
}

void apply_setting(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ParameterError("expected key=value, got '" + assignment + "'");
  apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

TrainConfig parse_train_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) throw ParseError(line_no, "expected key=value");
    try {
      apply_setting(base, line);
    } catch (const ParameterError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path.string());
  return parse_train_config(in, std::move(base));
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [key, s] : settings()) out += key + "=" + s.get(config) + "\n";
  return out;
}

double learning_rate(const TrainConfig& config, std::size_t step) {
  const double t = static_cast<double>(step);
  const double total = static_cast<double>(config.total_steps);
  const std::size_t warmup = std::min(config.warmup_steps(), config.total_steps);
  if (step >= config.total_steps) return 0.0;
  if (warmup > 0 && step <= warmup) return config.lr * t / static_cast<double>(warmup);
  return config.lr * (total - t) / (total - static_cast<double>(warmup));
}

MaskedBatch apply_masking(std::span<const TokenizedSentence> batch, double mask_rate, double affective_mask_rate,
                          std::size_t vocab_size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MaskedBatch out;
  out.sentences.assign(batch.begin(), batch.end());
  for (std::size_t i = 0; i < out.sentences.size(); ++i) {
    TokenizedSentence& s = out.sentences[i];
    std::vector<std::uint8_t> chosen(s.size(), 0);
    for (std::size_t j = 1; j < s.size(); ++j) {
      if (!is_special(s.token_ids[j]) && u(rng) < mask_rate) chosen[j] = 1;
    }
    for (std::size_t j = 1; j < s.size(); ++j) {
      if (chosen[j] || is_special(s.token_ids[j]) || !s.token_valences[j].present()) continue;
      if (u(rng) < affective_mask_rate) chosen[j] = 1;
    }
    for (std::size_t j = 1; j < s.size(); ++j) {
      if (!chosen[j]) continue;
      out.targets.push_back({i, j, s.token_ids[j]});
      const double r = u(rng);
      if (r < 0.8 || vocab_size <= Vocabulary::kReserved) {
        s.token_ids[j] = Vocabulary::kMask;
      } else if (r < 0.9) {
        std::uniform_int_distribution<std::uint32_t> pick(Vocabulary::kReserved, static_cast<std::uint32_t>(vocab_size - 1));
        s.token_ids[j] = pick(rng);
      }
    }
  }
  return out;
}

AffectiveSample sample_affective_tokens(const EncodedBatch& encoded, std::span<const ValenceRating> flat_valences,
                                        std::size_t k, std::mt19937_64& rng) {
  if (flat_valences.size() != encoded.batch * encoded.seq) {
    throw ShapeError("sample_affective_tokens: valences do not cover the batch");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < flat_valences.size(); ++i) {
    if (flat_valences[i].present()) candidates.push_back(i);
  }
  AffectiveSample out;
  out.batch.origin = Granularity::word;
  for (std::size_t i : sample_indices(candidates.size(), k, rng)) out.positions.push_back(candidates[i]);
  for (std::size_t p : out.positions) out.batch.valences.push_back(flat_valences[p]);
  if (out.positions.size() < 2) {
    out.skipped = true;
    return out;
  }
  out.batch.reps = ad::gather_rows(encoded.flat, out.positions);
  return out;
}

TrainState init_train_state(const TrainConfig& config, std::size_t vocab_size, std::uint64_t vocab_hash) {
  config.validate();
  TrainState s;
  s.config = config;
  s.params = init_params(config.encoder_config(vocab_size));
  s.momentum = MomentumState{clone_params(s.params), config.mu};
  s.queue = MomentumQueue(config.queue_capacity, config.hidden_dim);
  for (const auto& [name, t] : s.params.tensors) {
    s.adam_m[name] = Tensor(t.shape());
    s.adam_v[name] = Tensor(t.shape());
  }
  s.vocab_hash = vocab_hash;
  return s;
}

TrainingData prepare_training_data(const Lexicon& lexicon, const std::vector<AnnotatedSentence>& word_corpus,
                                   const std::vector<AnnotatedSentence>& sent_corpus, const TrainConfig& config) {
  if (word_corpus.empty()) throw EmptyInputError("word-level corpus is empty");
  if (sent_corpus.empty()) throw EmptyInputError("sentence-level corpus is empty");
  std::vector<AnnotatedSentence> all(word_corpus);
  all.insert(all.end(), sent_corpus.begin(), sent_corpus.end());
  TrainingData d;
  d.vocab = build_vocabulary(all, config.min_count);
  if (config.mode != TrainMode::selfsup) d.lexicon = lexicon;
  d.word_corpus = tokenize_all(word_corpus, d.vocab, d.lexicon, config.max_len);
  d.sent_corpus = tokenize_all(sent_corpus, d.vocab, d.lexicon, config.max_len);
  return d;
}

StepBatches draw_batches(const TrainingData& data, const TrainConfig& config, std::size_t step) {
  StepBatches b;
  auto word_rng = stream_rng(config.seed, step, kWordBatch);
  for (std::size_t i : sample_indices(data.word_corpus.size(), config.batch_size, word_rng)) {
    b.word.push_back(&data.word_corpus[i]);
  }
  auto sent_rng = stream_rng(config.seed, step, kSentBatch);
  for (std::size_t i : sample_indices(data.sent_corpus.size(), config.batch_size, sent_rng)) {
    b.sent.push_back(&data.sent_corpus[i]);
  }
  return b;
}

namespace {

struct StepLosses {
  ad::Var mlm, word, sent;
  // Sentence inputs whose momentum keys are enqueued after the update.
  std::vector<const TokenizedSentence*> key_sentences;
  std::vector<ValenceRating> key_valences;
};

ad::Var zero(ad::Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

MaskedBatch mask_pointers(std::span<const TokenizedSentence* const> batch, double rate, double affective_rate,
                          std::size_t vocab_size, std::mt19937_64& rng) {
  std::vector<TokenizedSentence> copies;
  copies.reserve(batch.size());
  for (const TokenizedSentence* s : batch) copies.push_back(*s);
  return apply_masking(copies, rate, affective_rate, vocab_size, rng);
}

StepLosses forward_losses(ad::Tape& tape, const BoundParams& bound, const TrainState& state,
                          std::span<const TokenizedSentence* const> word_batch,
                          std::span<const TokenizedSentence* const> sent_batch, std::size_t vocab_size,
                          std::size_t step) {
  const TrainConfig& cfg = state.config;
  const std::uint64_t seed = cfg.seed;
  StepLosses out;

  auto mask_rng = stream_rng(seed, step, kWordMask);
  const MaskedBatch masked = mask_pointers(word_batch, cfg.mask_rate, cfg.affective_mask_rate, vocab_size, mask_rng);
  const TokenBatch tokens = make_token_batch(std::span<const TokenizedSentence>(masked.sentences));
  const EncodedBatch enc = encode(bound, tokens, true, mix_seed(step, kDropWord));

  std::vector<std::size_t> rows;
  std::vector<std::uint32_t> targets;
  for (const MaskTarget& t : masked.targets) {
    rows.push_back(t.sentence * tokens.seq + t.position);
    targets.push_back(t.original);
  }
  if (rows.empty()) {
    spdlog::debug("step {}: no masked tokens, MLM contributes 0", step);
    out.mlm = zero(tape);
  } else {
    out.mlm = loss_mlm(mlm_logits(bound, enc.flat, rows), targets).value;
  }
  out.word = zero(tape);
  out.sent = zero(tape);
  if (cfg.mode == TrainMode::mlm_only) return out;

  // Word level.
  const bool selfsup = cfg.mode == TrainMode::selfsup;
  const std::vector<ValenceRating> flat_vals = flat_token_valences(word_batch, tokens.seq, selfsup);
  auto sample_rng = stream_rng(seed, step, kWordSample);
  const AffectiveSample sample = sample_affective_tokens(enc, flat_vals, cfg.word_cl_sample, sample_rng);
  if (sample.skipped) {
    spdlog::debug("step {}: {} affective position(s), word-level loss skipped", step, sample.positions.size());
  } else if (cfg.mode == TrainMode::soft) {
    out.word = loss_soft_cl(sample.batch, cfg.tau);
  } else if (cfg.mode == TrainMode::hard) {
    try {
      out.word = loss_supervised_cl(sample.batch.reps, polarity_labels(sample.batch.valences, cfg.polarity_threshold),
                                    cfg.tau);
    } catch (const DegenerateBatchError&) {
      spdlog::debug("step {}: no word-level anchor has a same-polarity partner", step);
    }
  } else {
    auto view_rng = stream_rng(seed, step, kWordViewB);
    const MaskedBatch view_b = mask_pointers(word_batch, cfg.mask_rate, 0.0, vocab_size, view_rng);
    const EncodedBatch enc_b =
        encode(bound, make_token_batch(std::span<const TokenizedSentence>(view_b.sentences)), true, mix_seed(step, kDropWordB));
    out.word = loss_selfsup_cl(sample.batch.reps, ad::gather_rows(enc_b.flat, sample.positions), cfg.tau);
  }

  // Sentence level.
  const Tensor queue_reps = state.queue.reps();
  const std::vector<ValenceRating> queue_vals = state.queue.valences();
  if (selfsup) {
    auto rng_a = stream_rng(seed, step, kSentViewA);
    auto rng_b = stream_rng(seed, step, kSentViewB);
    const MaskedBatch a = mask_pointers(sent_batch, cfg.mask_rate, 0.0, vocab_size, rng_a);
    const MaskedBatch b = mask_pointers(sent_batch, cfg.mask_rate, 0.0, vocab_size, rng_b);
    const EncodedBatch ea =
        encode(bound, make_token_batch(std::span<const TokenizedSentence>(a.sentences)), true, mix_seed(step, kDropSent));
    const EncodedBatch eb =
        encode(bound, make_token_batch(std::span<const TokenizedSentence>(b.sentences)), true, mix_seed(step, kDropSentB));
    out.sent = loss_selfsup_cl(ea.cls, eb.cls, cfg.tau, queue_reps.rows() > 0 ? &queue_reps : nullptr);
    out.key_sentences.assign(sent_batch.begin(), sent_batch.end());
    // Labels are unused in this mode; a placeholder keeps rows queueable.
    out.key_valences.assign(sent_batch.size(), ValenceRating(kValenceNeutral));
    return out;
  }

  std::vector<ValenceRating> vals;
  for (const TokenizedSentence* s : sent_batch) {
    if (!s->sentence_valence().present()) continue;
    out.key_sentences.push_back(s);
    vals.push_back(s->sentence_valence());
  }
  out.key_valences = vals;
  if (vals.empty() || vals.size() + queue_vals.size() < 2) {
    spdlog::debug("step {}: too few rated sentences, sentence-level loss skipped", step);
    return out;
  }
  const EncodedBatch es = encode(bound, make_token_batch(std::span<const TokenizedSentence* const>(out.key_sentences)),
                                 true, mix_seed(step, kDropSent));
  if (cfg.mode == TrainMode::soft) {
    out.sent = loss_momentum_cl(ContrastiveBatch{es.cls, vals, Granularity::sentence}, state.queue, cfg.tau);
  } else {
    try {
      const std::vector<int> extra_labels = polarity_labels(queue_vals, cfg.polarity_threshold);
      out.sent = loss_supervised_cl(es.cls, polarity_labels(vals, cfg.polarity_threshold), cfg.tau,
                                    queue_reps.rows() > 0 ? &queue_reps : nullptr, extra_labels);
    } catch (const DegenerateBatchError&) {
      spdlog::debug("step {}: no sentence-level anchor has a same-polarity partner", step);
    }
  }
  return out;
}

void adamw_update(TrainState& state, const BoundParams& bound, double lr, std::size_t t) {
  const TrainConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (auto& [name, p] : state.params.tensors) {
    const Tensor g = bound.at(name).grad();
    auto m = state.adam_m.at(name).data();
    auto v = state.adam_v.at(name).data();
    auto w = p.data();
    const double decay = p.rank() >= 2 ? c.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + c.adam_eps) + decay * w[i]);
    }
  }
}

}  // namespace

TrainLogRecord train_step(TrainState& state, std::span<const TokenizedSentence* const> word_batch,
                          std::span<const TokenizedSentence* const> sent_batch, std::size_t vocab_size) {
  const TrainConfig& cfg = state.config;
  const std::size_t step = state.step + 1;
  if (word_batch.empty()) throw ShapeError("train_step: empty word batch");

  ad::Tape tape;
  const BoundParams bound = bind_params(tape, state.params, true);
  LossParts parts;
  StepLosses losses;
  try {
    losses = forward_losses(tape, bound, state, word_batch, sent_batch, vocab_size, step);
    const ad::Var total = combine_losses(losses.mlm, losses.word, losses.sent, cfg.lambda1, cfg.lambda2);
    parts = LossParts{losses.mlm.value().item(), losses.word.value().item(), losses.sent.value().item()};
    tape.backward(total);
  } catch (const NumericError& e) {
    spdlog::error("non-finite value at step {}: {}\nword batch:{}\nsentence batch:{}", step, e.what(),
                  dump_batch(word_batch), dump_batch(sent_batch));
    throw TrainingDivergedError(step, e.what());
  }

  const double lr = learning_rate(cfg, step);
  adamw_update(state, bound, lr, step);
  momentum_update(state.momentum, state.params);

  if (cfg.mode != TrainMode::mlm_only && cfg.queue_capacity > 0 && !losses.key_sentences.empty()) {
    ad::Tape key_tape;
    const BoundParams key_params = bind_params(key_tape, state.momentum.params, false);
    const EncodedBatch keys =
        encode(key_params, make_token_batch(std::span<const TokenizedSentence* const>(losses.key_sentences)), false);
    Tensor reps = keys.cls.value();
    normalize_rows(reps);
    state.queue.enqueue(reps, losses.key_valences);
  }
  state.step = step;

  const LossBreakdown b = loss_combined(parts, cfg.lambda1, cfg.lambda2);
  return TrainLogRecord{step, b.mlm, b.word_mcl, b.sent_mcl, b.total, lr, state.queue.size()};
}

void run_training(TrainState& state, const TrainingData& data, std::size_t stop_at, const StepCallback& on_step) {
  if (state.vocab_hash != data.vocab.hash()) {
    throw IncompatibleInputError("training state was created for a different vocabulary");
  }
  const std::size_t last = std::min(stop_at, state.config.total_steps);
  while (state.step < last) {
    const StepBatches batches = draw_batches(data, state.config, state.step + 1);
    const TrainLogRecord rec = train_step(state, batches.word, batches.sent, data.vocab.size());
    if (on_step) on_step(rec, state);
  }
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  NamedArrays a;
  a["config/encoder"] = encoder_config_array(state.params.config);
  a["meta/step"] = Tensor::scalar(static_cast<double>(state.step));
  a["meta/vocab_hash"] = Tensor::vector({static_cast<double>(state.vocab_hash >> 32),
                                         static_cast<double>(state.vocab_hash & 0xffffffffULL)});
  a["meta/mu"] = Tensor::scalar(state.momentum.mu);
  export_params(state.params, "params/", a);
  export_params(state.momentum.params, "momentum/", a);
  for (const auto& [name, t] : state.adam_m) a["adam/m/" + name] = t;
  for (const auto& [name, t] : state.adam_v) a["adam/v/" + name] = t;
  a["queue/reps"] = state.queue.reps();
  std::vector<double> vals;
  for (ValenceRating v : state.queue.valences()) vals.push_back(v.value());
  a["queue/valences"] = Tensor(Shape{vals.size()}, vals);
  a["queue/capacity"] = Tensor::scalar(static_cast<double>(state.queue.capacity()));
  write_named_arrays(path, a);
}

TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config) {
  const NamedArrays a = read_named_arrays(path);
  const auto get = [&](const std::string& name) -> const Tensor& {
    const auto it = a.find(name);
    if (it == a.end()) throw FormatError("checkpoint missing array '" + name + "'");
    return it->second;
  };
  const EncoderConfig enc = encoder_config_from_array(get("config/encoder"));
  const Tensor& hash = get("meta/vocab_hash");
  if (hash.size() != 2) throw FormatError("checkpoint: malformed meta/vocab_hash");

  TrainState s;
  s.config = config;
  s.config.hidden_dim = enc.hidden_dim;
  s.config.n_layers = enc.n_layers;
  s.config.n_heads = enc.n_heads;
  s.config.ffn_dim = enc.ffn_dim;
  s.config.max_len = enc.max_len;
  s.config.dropout = enc.dropout;
  s.config.seed = enc.seed;
  s.config.mu = get("meta/mu").item();
  s.params = import_params(enc, "params/", a);
  s.momentum = MomentumState{import_params(enc, "momentum/", a), s.config.mu};
  for (const auto& [name, t] : s.params.tensors) {
    s.adam_m[name] = get("adam/m/" + name);
    s.adam_v[name] = get("adam/v/" + name);
    if (s.adam_m[name].shape() != t.shape() || s.adam_v[name].shape() != t.shape()) {
      throw FormatError("checkpoint: optimizer moment shape mismatch for '" + name + "'");
    }
  }
  s.step = static_cast<std::size_t>(get("meta/step").item());
  s.vocab_hash = (static_cast<std::uint64_t>(hash[0]) << 32) | static_cast<std::uint64_t>(hash[1]);

  const Tensor& qreps = get("queue/reps");
  const Tensor& qvals = get("queue/valences");
  const auto capacity = static_cast<std::size_t>(get("queue/capacity").item());
  s.config.queue_capacity = capacity;
  s.queue = MomentumQueue(capacity, enc.hidden_dim);
  if (qreps.size() > 0) {
    if (qreps.rank() != 2 || qreps.dim(0) != qvals.size()) throw FormatError("checkpoint: queue arrays disagree");
    std::vector<ValenceRating> v;
    for (double x : qvals.values()) v.emplace_back(x);
    s.queue.enqueue(qreps, v);
  }
  return s;
}

std::string format_log_record(const TrainLogRecord& r) {
  return std::to_string(r.step) + "," + format_number(r.mlm) + "," + format_number(r.word_mcl) + "," +
         format_number(r.sent_mcl) + "," + format_number(r.total) + "," + format_number(r.lr) + "," +
         std::to_string(r.queue_len);
}

std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTrainLogHeader) throw ParseError(1, "unexpected training log header");
  std::vector<TrainLogRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw ParseError(line_no, "expected 7 fields");
    try {
      out.push_back(TrainLogRecord{parse_value<std::size_t>("step", f[0]), parse_value<double>("mlm", f[1]),
                                   parse_value<double>("word_mcl", f[2]), parse_value<double>("sent_mcl", f[3]),
                                   parse_value<double>("total", f[4]), parse_value<double>("lr", f[5]),
                                   parse_value<std::size_t>("queue_len", f[6])});
    } catch (const ParameterError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

Tensor sentence_embeddings(const EncoderParams& params, std::span<const TokenizedSentence> sentences,
                           std::size_t batch_size) {
  const std::size_t d = params.config.hidden_dim;
  Tensor out({sentences.size(), d});
  if (batch_size == 0) batch_size = 1;
  for (std::size_t begin = 0; begin < sentences.size(); begin += batch_size) {
    const std::size_t end = std::min(sentences.size(), begin + batch_size);
    ad::Tape tape;
    const BoundParams bound = bind_params(tape, params, false);
    const EncodedBatch enc = encode(bound, make_token_batch(sentences.subspan(begin, end - begin)), false);
    const Tensor& cls = enc.cls.value();
    for (std::size_t r = 0; r < end - begin; ++r) {
      std::copy(cls.row(r).begin(), cls.row(r).end(), out.row(begin + r).begin());
    }
  }
  return out;
}

}  // namespace softmcl
