#pragma once

// Desk-scale synthetic data: a word-valence lexicon and a corpus whose
// sentence valence is the mean valence of the lexicon words it contains.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "softmcl/affect_data.hpp"

namespace softmcl {

struct SyntheticCorpus {
  Lexicon lexicon;
  std::vector<AnnotatedSentence> sentences;
};

struct SyntheticOptions {
  std::size_t n_sentences = 1000;
  std::size_t vocab = 200;       // lexicon words
  std::size_t fillers = 30;      // words outside the lexicon
  std::size_t min_words = 5;
  std::size_t max_words = 10;
  std::size_t min_affective = 2;
  std::size_t max_affective = 4;
  double spread = 0.75;          // std-dev of word valence around a sentence's target
  std::uint64_t seed = 0;
};

// Word valences are uniform on [1,9], rounded to 2 decimals. Each sentence
// draws a target valence, picks lexicon words near it plus filler words, and
// carries the mean of its lexicon words' valences. Throws ParameterError
// when n_sentences < 10 or vocab == 0.
SyntheticCorpus generate_synthetic(const SyntheticOptions& options);

// Writes `lexicon.tsv` and `corpus.jsonl` under dir (created if needed).
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
void save_corpus(const std::vector<AnnotatedSentence>& corpus, const std::filesystem::path& path);

}  // namespace softmcl
