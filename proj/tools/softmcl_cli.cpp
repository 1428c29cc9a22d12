// softmcl: command-line front end for pre-training, evaluation, sweeps and
// synthetic data generation.
//
// Exit codes: 0 success, 1 usage, 2 missing/bad input, 3 numerical failure,
// 4 incompatible checkpoint/vocabulary.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <string>
#include <thread>
#include <vector>

#include "softmcl/affect_data.hpp"
#include "softmcl/csv.hpp"
#include "softmcl/errors.hpp"
#include "softmcl/eval_metrics.hpp"
#include "softmcl/synthetic.hpp"
#include "softmcl/trainer.hpp"

namespace fs = std::filesystem;
using namespace softmcl;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kInput = 2, kNumeric = 3, kIncompatible = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- shared training inputs -------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string lexicon;
  std::string word_corpus;
  std::string sent_corpus;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::vector<std::string> sets;
};

void add_train_options(CLI::App* app, TrainArgs& a, bool lexicon_required) {
  app->add_option("--config", a.config, "key=value training config file");
  auto* lex = app->add_option("--lexicon", a.lexicon, "word<TAB>valence lexicon");
  if (lexicon_required) lex->required();
  app->add_option("--word-corpus", a.word_corpus, "JSONL corpus for word-level batches")->required();
  app->add_option("--sent-corpus", a.sent_corpus, "JSONL corpus for sentence-level batches")->required();
  app->add_option("--out-dir", a.out_dir, "output directory")->required();
  app->add_option("--seed", a.seed, "random seed");
  app->add_option("--steps", a.steps, "total training steps (schedule length)");
  app->add_option("--set", a.sets, "config override key=value (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
}

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) c = load_train_config(a.config);
  for (const std::string& s : a.sets) apply_setting(c, s);
  if (a.seed) c.seed = *a.seed;
  if (a.steps) c.total_steps = *a.steps;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct LoadedInputs {
  Lexicon lexicon;
  std::vector<AnnotatedSentence> word;
  std::vector<AnnotatedSentence> sent;
};

LoadedInputs load_inputs(const TrainArgs& a, bool need_lexicon) {
  LoadedInputs in;
  if (need_lexicon) {
    if (a.lexicon.empty()) throw UsageError("--lexicon is required for this mode");
    in.lexicon = load_lexicon(a.lexicon);
  }
  in.word = load_corpus(a.word_corpus);
  in.sent = load_corpus(a.sent_corpus);
  return in;
}

// Trains one run into `dir`; returns the final state. Appends to an existing
// log when resuming.
TrainState train_run(const TrainConfig& config, const TrainingData& data, const fs::path& dir,
                     const std::string& resume, std::optional<std::size_t> stop_at) {
  fs::create_directories(dir);
  data.vocab.save(dir / "vocab.tsv");
  write_text(dir / "config.txt", format_train_config(config));

  TrainState state = resume.empty() ? init_train_state(config, data.vocab.size(), data.vocab.hash())
                                    : load_checkpoint(resume, config);
  if (state.vocab_hash != data.vocab.hash()) {
    throw IncompatibleInputError("checkpoint " + resume + " was trained with a different vocabulary");
  }

  const fs::path log_path = dir / "train_log.csv";
  std::string kept = std::string(kTrainLogHeader) + "\n";
  if (!resume.empty() && fs::exists(log_path)) {
    for (const TrainLogRecord& r : read_train_log(log_path)) {
      if (r.step <= state.step) kept += format_log_record(r) + "\n";
    }
  }
  write_text(log_path, kept);
  std::ofstream log(log_path, std::ios::binary | std::ios::app);

  const fs::path ckpt = dir / "checkpoint.smcl";
  const std::size_t last = std::min(stop_at.value_or(config.total_steps), config.total_steps);
  spdlog::info("training {} mode from step {} to {} (affective_mask_rate={})", to_string(config.mode), state.step, last,
               config.affective_mask_rate);
  run_training(state, data, last, [&](const TrainLogRecord& r, const TrainState& s) {
    log << format_log_record(r) << '\n';
    if (config.checkpoint_every > 0 && r.step % config.checkpoint_every == 0) {
      log.flush();
      save_checkpoint(s, ckpt);
    }
  });
  log.flush();
  save_checkpoint(state, ckpt);
  return state;
}

std::vector<const AnnotatedSentence*> rated(const std::vector<AnnotatedSentence>& corpus) {
  std::vector<const AnnotatedSentence*> out;
  for (const AnnotatedSentence& s : corpus) {
    if (s.sentence_valence.present()) out.push_back(&s);
  }
  return out;
}

struct Evaluation {
  std::vector<MetricReport> probe;
  CollapseDiagnostics collapse;
};

Evaluation evaluate(const EncoderParams& params, const Vocabulary& vocab, const std::vector<AnnotatedSentence>& corpus) {
  std::vector<TokenizedSentence> tokens;
  std::vector<ValenceRating> vals;
  std::vector<double> v;
  const Lexicon none;
  for (const AnnotatedSentence* s : rated(corpus)) {
    tokens.push_back(tokenize(*s, vocab, none, params.config.max_len));
    vals.push_back(s->sentence_valence);
    v.push_back(s->sentence_valence.value());
  }
  if (tokens.size() < 10) throw EmptyInputError("evaluation needs at least 10 sentences with a valence");
  const Tensor emb = sentence_embeddings(params, tokens);
  return Evaluation{valence_probe(emb, v), collapse_diagnostics(emb, vals)};
}

std::vector<MetricReport> all_reports(const Evaluation& e) {
  std::vector<MetricReport> out = e.probe;
  for (const MetricReport& r : to_reports(e.collapse)) out.push_back(r);
  return out;
}

Vocabulary vocab_for_checkpoint(const std::string& checkpoint, const std::string& vocab_flag,
                                const TrainState& state) {
  const fs::path vocab_path = vocab_flag.empty() ? fs::path(checkpoint).parent_path() / "vocab.tsv" : fs::path(vocab_flag);
  Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.hash() != state.vocab_hash) {
    throw IncompatibleInputError("vocabulary " + vocab_path.string() + " does not match checkpoint " + checkpoint);
  }
  return vocab;
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SOFTMCL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs fn(i) for i in [0, jobs) on up to worker_count threads. The first
// exception is rethrown after all workers stop.
void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = jobs;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < worker_count(jobs); ++t) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- commands ---------------------------------------------------------------

int cmd_gen_synth(std::size_t n, std::size_t vocab, std::uint64_t seed, const std::string& out) {
  if (n < 10) throw UsageError("--n must be at least 10");
  if (vocab == 0) throw UsageError("--vocab must be positive");
  SyntheticOptions o;
  o.n_sentences = n;
  o.vocab = vocab;
  o.seed = seed;
  write_synthetic(generate_synthetic(o), out);
  spdlog::info("wrote {} sentences and {} lexicon words to {}", n, vocab, out);
  return kOk;
}

int cmd_pretrain(const TrainArgs& a, const std::string& resume, std::optional<std::size_t> stop_at) {
  const TrainConfig config = resolve_config(a);
  const LoadedInputs in = load_inputs(a, config.mode != TrainMode::selfsup);
  const TrainingData data = prepare_training_data(in.lexicon, in.word, in.sent, config);
  if (!resume.empty() && !fs::exists(resume)) throw MissingInputError(resume);
  train_run(config, data, a.out_dir, resume, stop_at);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus, const std::string& vocab_flag,
             const std::string& out) {
  if (!fs::exists(checkpoint)) throw MissingInputError(checkpoint);
  const TrainState state = load_checkpoint(checkpoint, TrainConfig{});
  const Vocabulary vocab = vocab_for_checkpoint(checkpoint, vocab_flag, state);
  const Evaluation e = evaluate(state.params, vocab, load_corpus(corpus));
  const std::vector<MetricReport> reports = all_reports(e);
  std::ostringstream os;
  write_metric_csv(os, reports);
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_text(out, os.str());
  }
  return kOk;
}

int cmd_sweep(const TrainArgs& a, const std::string& param, const std::vector<std::string>& values,
              const std::string& eval_corpus) {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"tau", {"tau"}}, {"mu", {"mu"}}, {"queue", {"queue_capacity"}}, {"lambda", {"lambda1", "lambda2"}}};
  const auto key = keys.find(param);
  if (key == keys.end()) throw UsageError("--param must be one of tau|mu|queue|lambda");
  if (values.empty()) throw UsageError("--values must list at least one value");

  const TrainConfig base = resolve_config(a);
  std::vector<TrainConfig> configs;
  for (const std::string& v : values) {
    TrainConfig c = base;
    for (const std::string& k : key->second) apply_setting(c, k, v);
    c.validate();
    configs.push_back(c);
  }
  const LoadedInputs in = load_inputs(a, base.mode != TrainMode::selfsup);
  const std::vector<AnnotatedSentence> eval_sentences = eval_corpus.empty() ? in.sent : load_corpus(eval_corpus);
  const TrainingData data = prepare_training_data(in.lexicon, in.word, in.sent, base);

  std::vector<std::vector<MetricReport>> results(values.size());
  parallel_for(values.size(), [&](std::size_t i) {
    const fs::path dir = fs::path(a.out_dir) / (param + "_" + values[i]);
    const TrainState s = train_run(configs[i], data, dir, "", std::nullopt);
    results[i] = all_reports(evaluate(s.params, data.vocab, eval_sentences));
    spdlog::info("sweep {}={} done", param, values[i]);
  });

  std::ostringstream os;
  os << "param,value,metric,score\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (const MetricReport& r : results[i]) os << param << ',' << values[i] << ',' << r.metric << ',' << format_number(r.value) << '\n';
  }
  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "sweep.csv", os.str());
  std::cout << os.str();
  return kOk;
}

int cmd_compare(const TrainArgs& a, const std::vector<std::string>& modes) {
  const TrainConfig base = resolve_config(a);
  std::vector<TrainMode> parsed;
  for (const std::string& m : modes) {
    const TrainMode mode = parse_train_mode(m);
    if (mode == TrainMode::mlm_only) throw UsageError("--mode must be selfsup|hard|soft");
    parsed.push_back(mode);
  }
  const bool need_lexicon = std::any_of(parsed.begin(), parsed.end(), [](TrainMode m) { return m != TrainMode::selfsup; });
  const LoadedInputs in = load_inputs(a, need_lexicon);

  std::vector<std::vector<MetricReport>> results(parsed.size());
  parallel_for(parsed.size(), [&](std::size_t i) {
    TrainConfig c = base;
    c.mode = parsed[i];
    const TrainingData data = prepare_training_data(in.lexicon, in.word, in.sent, c);
    const fs::path dir = fs::path(a.out_dir) / to_string(c.mode);
    const TrainState s = train_run(c, data, dir, "", std::nullopt);
    const Evaluation e = evaluate(s.params, data.vocab, in.sent);
    results[i] = to_reports(e.collapse);
    std::ostringstream os;
    write_metric_csv(os, results[i]);
    write_text(dir / "diagnostics.csv", os.str());
  });

  std::ostringstream os;
  os << "mode,metric,value,n\n";
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    for (const MetricReport& r : results[i]) {
      os << to_string(parsed[i]) << ',' << r.metric << ',' << format_number(r.value) << ',' << r.n << '\n';
    }
  }
  write_text(fs::path(a.out_dir) / "compare.csv", os.str());
  std::cout << os.str();
  return kOk;
}

int cmd_export(const std::string& checkpoint, const std::string& corpus_path, const std::string& vocab_flag,
               const std::string& lexicon_path, const std::string& level, const std::string& out) {
  if (level != "sentence" && level != "word") throw UsageError("--level must be sentence|word");
  if (!fs::exists(checkpoint)) throw MissingInputError(checkpoint);
  const TrainState state = load_checkpoint(checkpoint, TrainConfig{});
  const Vocabulary vocab = vocab_for_checkpoint(checkpoint, vocab_flag, state);
  const Lexicon lexicon = lexicon_path.empty() ? Lexicon{} : load_lexicon(lexicon_path);
  const std::vector<AnnotatedSentence> corpus = load_corpus(corpus_path);
  const std::vector<TokenizedSentence> tokens = tokenize_all(corpus, vocab, lexicon, state.params.config.max_len);
  const std::size_t d = state.params.config.hidden_dim;

  std::ostringstream os;
  os << "id,valence";
  for (std::size_t c = 0; c < d; ++c) os << ",dim" << c;
  os << '\n';
  const auto emit = [&](const std::string& id, ValenceRating v, std::span<const double> row) {
    os << id << ',' << format_number(v.value());
    for (double x : row) os << ',' << format_number(x);
    os << '\n';
  };
  if (level == "sentence") {
    const Tensor emb = sentence_embeddings(state.params, tokens);
    for (std::size_t i = 0; i < tokens.size(); ++i) emit(std::to_string(i), tokens[i].sentence_valence(), emb.row(i));
  } else {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      ad::Tape tape;
      const BoundParams bound = bind_params(tape, state.params, false);
      const EncodedBatch enc = encode(bound, make_token_batch(std::span<const TokenizedSentence>(&tokens[i], 1)), false);
      const Tensor& flat = enc.flat.value();
      for (std::size_t j = 1; j < tokens[i].size(); ++j) {
        emit(std::to_string(i) + ":" + std::to_string(j), tokens[i].token_valences[j], flat.row(j));
      }
    }
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_text(out, os.str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft valence-weighted momentum contrastive pre-training"};
  app.require_subcommand(1);
  // A repeated scalar option overrides the earlier one.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  std::size_t n = 0, vocab_words = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic lexicon and corpus");
  gen->add_option("--n", n, "number of sentences")->required();
  gen->add_option("--vocab", vocab_words, "number of lexicon words")->required();
  gen->add_option("--seed", synth_seed, "random seed");
  gen->add_option("--out", synth_out, "output directory")->required();

  TrainArgs pre_args;
  std::string resume;
  std::optional<std::size_t> stop_at;
  auto* pre = app.add_subcommand("pretrain", "pre-train an encoder");
  add_train_options(pre, pre_args, false);
  pre->add_option("--resume", resume, "checkpoint to resume from");
  pre->add_option("--stop-at", stop_at, "stop after this step (schedule unchanged)");

  std::string eval_ckpt, eval_corpus, eval_vocab, eval_out;
  auto* ev = app.add_subcommand("eval", "probe and collapse metrics of a checkpoint");
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--corpus", eval_corpus)->required();
  ev->add_option("--vocab", eval_vocab, "vocabulary (default: vocab.tsv beside the checkpoint)");
  ev->add_option("--out", eval_out, "metrics CSV (default stdout)");

  TrainArgs sweep_args;
  std::string sweep_param, sweep_eval;
  std::vector<std::string> sweep_values;
  auto* sw = app.add_subcommand("sweep", "one run per hyperparameter value");
  add_train_options(sw, sweep_args, false);
  sw->add_option("--param", sweep_param, "tau|mu|queue|lambda")->required();
  sw->add_option("--values", sweep_values, "values to try")
      ->required()
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sw->add_option("--eval-corpus", sweep_eval, "corpus for evaluation (default: sentence corpus)");

  TrainArgs cmp_args;
  std::vector<std::string> cmp_modes = {"selfsup", "hard", "soft"};
  auto* cmp = app.add_subcommand("compare-losses", "collapse diagnostics of selfsup/hard/soft runs");
  add_train_options(cmp, cmp_args, false);
  cmp->add_option("--mode", cmp_modes, "modes to train (selfsup|hard|soft)")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  std::string ex_ckpt, ex_corpus, ex_vocab, ex_lexicon, ex_out, ex_level = "sentence";
  auto* ex = app.add_subcommand("export-embeddings", "write embeddings as CSV");
  ex->add_option("--checkpoint", ex_ckpt)->required();
  ex->add_option("--corpus", ex_corpus)->required();
  ex->add_option("--vocab", ex_vocab, "vocabulary (default: vocab.tsv beside the checkpoint)");
  ex->add_option("--lexicon", ex_lexicon, "lexicon for word-level valences");
  ex->add_option("--level", ex_level, "sentence|word");
  ex->add_option("--out", ex_out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("softmcl"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*gen) return cmd_gen_synth(n, vocab_words, synth_seed, synth_out);
    if (*pre) return cmd_pretrain(pre_args, resume, stop_at);
    if (*ev) return cmd_eval(eval_ckpt, eval_corpus, eval_vocab, eval_out);
    if (*sw) return cmd_sweep(sweep_args, sweep_param, sweep_values, sweep_eval);
    if (*cmp) return cmd_compare(cmp_args, cmp_modes);
    if (*ex) return cmd_export(ex_ckpt, ex_corpus, ex_vocab, ex_lexicon, ex_level, ex_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParameterError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const MissingInputError& e) {
    std::cerr << "missing input: " << e.path() << '\n';
    return kInput;
  } catch (const ParseError& e) {
    std::cerr << "bad input: " << e.what() << '\n';
    return kInput;
  } catch (const RangeError& e) {
    std::cerr << "bad input: " << e.what() << '\n';
    return kInput;
  } catch (const EmptyInputError& e) {
    std::cerr << "bad input: " << e.what() << '\n';
    return kInput;
  } catch (const TrainingDivergedError& e) {
    std::cerr << "numerical failure at step " << e.step() << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IncompatibleInputError& e) {
    std::cerr << "incompatible input: " << e.what() << '\n';
    return kIncompatible;
  } catch (const FormatError& e) {
    std::cerr << "incompatible input: " << e.what() << '\n';
    return kIncompatible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
