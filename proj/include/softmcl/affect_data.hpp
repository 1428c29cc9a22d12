#pragma once

// Valence lexicons, valence-annotated corpora, tokenization and per-token
// valence alignment.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace softmcl {

inline constexpr double kValenceMin = 1.0;
inline constexpr double kValenceMax = 9.0;
inline constexpr double kValenceNeutral = 5.0;

// Valence on the [1,9] scale; 0 is the "absent / masked" sentinel.
class ValenceRating {
 public:
  constexpr ValenceRating() = default;
  // Throws RangeError unless v == 0 or 1 <= v <= 9.
  explicit ValenceRating(double v);

  static constexpr ValenceRating absent() { return ValenceRating(); }

  constexpr double value() const noexcept { return value_; }
  constexpr bool present() const noexcept { return value_ != 0.0; }

  friend constexpr auto operator<=>(ValenceRating, ValenceRating) = default;

 private:
  double value_ = 0.0;
};

class Lexicon {
 public:
  Lexicon() = default;
  // Every value must lie in [1,9].
  Lexicon(std::string source_name, const std::map<std::string, double>& entries);

  // Sentinel for absent words; the lookup is case-insensitive (ASCII).
  ValenceRating lookup(std::string_view word) const;
  bool contains(std::string_view word) const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::string& source_name() const noexcept { return source_name_; }
  const std::map<std::string, ValenceRating>& entries() const noexcept { return entries_; }

  // Number of duplicate lines seen during loading (last occurrence kept).
  std::size_t duplicates() const noexcept { return duplicates_; }

 private:
  friend Lexicon parse_lexicon(std::istream& in, std::string source_name);
  std::string source_name_;
  std::map<std::string, ValenceRating> entries_;
  std::size_t duplicates_ = 0;
};

// TSV `word<TAB>valence[<TAB>...]`, `#` comments, LF or CRLF.
Lexicon parse_lexicon(std::istream& in, std::string source_name);
Lexicon load_lexicon(const std::filesystem::path& path);
void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path);

struct AnnotatedSentence {
  std::string text;
  ValenceRating sentence_valence;
};

// JSONL, one {"text": ..., "valence": ...} object per line.
std::vector<AnnotatedSentence> parse_corpus(std::istream& in);
std::vector<AnnotatedSentence> load_corpus(const std::filesystem::path& path);

class Vocabulary {
 public:
  static constexpr std::uint32_t kCls = 0;
  static constexpr std::uint32_t kMask = 1;
  static constexpr std::uint32_t kPad = 2;
  static constexpr std::uint32_t kUnk = 3;
  static constexpr std::uint32_t kReserved = 4;

  // Reserved tokens only.
  Vocabulary();

  // Appends a token with the next dense id; returns the existing id if present.
  std::uint32_t add(const std::string& token);
  // UNK when absent.
  std::uint32_t id(std::string_view token) const;
  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  // 64-bit FNV-1a over the serialized vocabulary file.
  std::uint64_t hash() const;

  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Reserved ids first, then tokens by descending frequency, ties broken
// lexicographically. Tokens seen fewer than min_count times are dropped.
Vocabulary build_vocabulary(const std::vector<AnnotatedSentence>& corpus, std::size_t min_count);

struct WordSpan {
  std::string word;  // lowercased
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Lowercase whitespace/punctuation split; each ASCII punctuation character is its own word.
std::vector<WordSpan> split_words(std::string_view text);

// Splits one word into subword pieces. An empty function means "no split".
using SubwordSplitter = std::function<std::vector<std::string>(std::string_view word)>;

struct TokenizedSentence {
  std::vector<std::uint32_t> token_ids;
  std::vector<ValenceRating> token_valences;
  std::vector<std::pair<std::size_t, std::size_t>> surface_spans;

  std::size_t size() const noexcept { return token_ids.size(); }
  ValenceRating sentence_valence() const { return token_valences.front(); }
};

// Position 0 is CLS carrying the sentence valence. Subtokens of a lexicon
// word share its valence; tokens of non-lexicon words carry the sentinel.
// Output is truncated to max_len positions including CLS.
TokenizedSentence tokenize(const AnnotatedSentence& sentence, const Vocabulary& vocab, const Lexicon& lexicon,
                           std::size_t max_len, const SubwordSplitter& splitter = {});

std::vector<TokenizedSentence> tokenize_all(const std::vector<AnnotatedSentence>& corpus, const Vocabulary& vocab,
                                            const Lexicon& lexicon, std::size_t max_len);

}  // namespace softmcl
