#include "softmcl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <string>

#include "softmcl/errors.hpp"

namespace softmcl {

namespace {

std::string numbered(char prefix, std::size_t i, std::size_t count) {
  const int width = count > 1000 ? static_cast<int>(std::to_string(count - 1).size()) : 3;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticOptions& o) {
  if (o.n_sentences < 10) throw ParameterError("synthetic corpus needs at least 10 sentences");
  if (o.vocab == 0) throw ParameterError("synthetic vocabulary must be non-empty");
  if (o.min_words == 0 || o.min_words > o.max_words || o.min_affective == 0 || o.min_affective > o.max_affective) {
    throw ParameterError("synthetic sentence length bounds are inconsistent");
  }
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> valence(kValenceMin, kValenceMax);

  std::vector<std::string> words(o.vocab);
  std::vector<double> word_valence(o.vocab);
  std::map<std::string, double> entries;
  for (std::size_t i = 0; i < o.vocab; ++i) {
    words[i] = numbered('w', i, o.vocab);
    word_valence[i] = std::clamp(std::round(valence(rng) * 100.0) / 100.0, kValenceMin, kValenceMax);
    entries[words[i]] = word_valence[i];
  }
  std::vector<std::string> fillers(o.fillers);
  for (std::size_t i = 0; i < o.fillers; ++i) fillers[i] = numbered('f', i, o.fillers);

  SyntheticCorpus out;
  out.lexicon = Lexicon("synthetic", entries);
  out.sentences.reserve(o.n_sentences);
  std::uniform_int_distribution<std::size_t> length(o.min_words, o.max_words);
  std::uniform_int_distribution<std::size_t> n_affective(o.min_affective, o.max_affective);
  for (std::size_t s = 0; s < o.n_sentences; ++s) {
    const double target = valence(rng);
    std::vector<double> weights(o.vocab);
    for (std::size_t i = 0; i < o.vocab; ++i) {
      const double z = (word_valence[i] - target) / o.spread;
      weights[i] = std::exp(-0.5 * z * z) + 1e-12;
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const std::size_t len = length(rng);
    const std::size_t k = std::min(len, n_affective(rng));

    std::vector<std::string> tokens;
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t w = pick(rng);
      tokens.push_back(words[w]);
      sum += word_valence[w];
    }
    for (std::size_t j = k; j < len; ++j) {
      if (fillers.empty()) break;
      std::uniform_int_distribution<std::size_t> f(0, fillers.size() - 1);
      tokens.push_back(fillers[f(rng)]);
    }
    std::shuffle(tokens.begin(), tokens.end(), rng);

    AnnotatedSentence sentence;
    for (std::size_t j = 0; j < tokens.size(); ++j) sentence.text += (j ? " " : "") + tokens[j];
    sentence.sentence_valence = ValenceRating(sum / static_cast<double>(k));
    out.sentences.push_back(std::move(sentence));
  }
  return out;
}

void save_corpus(const std::vector<AnnotatedSentence>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const AnnotatedSentence& s : corpus) {
    nlohmann::json j;
    j["text"] = s.text;
    if (s.sentence_valence.present()) j["valence"] = s.sentence_valence.value();
    out << j.dump() << '\n';
  }
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_lexicon(corpus.lexicon, dir / "lexicon.tsv");
  save_corpus(corpus.sentences, dir / "corpus.jsonl");
}

}  // namespace softmcl
