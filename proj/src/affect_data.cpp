#include "softmcl/affect_data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <spdlog/spdlog.h>
#include <sstream>

#include "softmcl/errors.hpp"

namespace softmcl {

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool in_scale(double v) { return v >= kValenceMin && v <= kValenceMax; }

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path.string());
  return in;
}

}  // namespace

ValenceRating::ValenceRating(double v) : value_(v) {
  if (!(v == 0.0 || in_scale(v))) {
    throw RangeError("valence " + std::to_string(v) + " outside [1,9] (0 is the absent sentinel)");
  }
}

// ---- Lexicon ----------------------------------------------------------------

Lexicon::Lexicon(std::string source_name, const std::map<std::string, double>& entries)
    : source_name_(std::move(source_name)) {
  for (const auto& [word, v] : entries) {
    if (!in_scale(v)) throw RangeError("lexicon value for '" + word + "' outside [1,9]");
    entries_[ascii_lower(word)] = ValenceRating(v);
  }
}

ValenceRating Lexicon::lookup(std::string_view word) const {
  const auto it = entries_.find(ascii_lower(word));
  return it == entries_.end() ? ValenceRating::absent() : it->second;
}

bool Lexicon::contains(std::string_view word) const { return entries_.count(ascii_lower(word)) > 0; }

Lexicon parse_lexicon(std::istream& in, std::string source_name) {
  Lexicon lex;
  lex.source_name_ = std::move(source_name);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string_view content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(line_no, "expected word<TAB>valence");
    const std::string word = ascii_lower(trim(std::string_view(line).substr(0, tab)));
    if (word.empty()) throw ParseError(line_no, "empty word");
    std::string_view rest = std::string_view(line).substr(tab + 1);
    const std::size_t next = rest.find('\t');
    const std::string_view field = next == std::string_view::npos ? rest : rest.substr(0, next);
    double v = 0.0;
    if (!parse_double(field, v)) throw ParseError(line_no, "non-numeric valence '" + std::string(field) + "'");
    if (!in_scale(v)) throw ParseError(line_no, "valence " + std::string(trim(field)) + " outside [1,9]");
    auto [it, inserted] = lex.entries_.insert_or_assign(word, ValenceRating(v));
    if (!inserted) {
      ++lex.duplicates_;
      spdlog::warn("lexicon {}: duplicate entry '{}' at line {}, keeping the last value", lex.source_name_, word,
                   line_no);
    }
  }
  if (lex.entries_.empty()) throw EmptyInputError("lexicon " + lex.source_name_ + " has no entries");
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  return parse_lexicon(in, path.filename().string());
}

void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# word\tvalence\n";
  for (const auto& [word, v] : lexicon.entries()) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v.value());
    out << word << '\t' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  }
}

// ---- Corpus -----------------------------------------------------------------

std::vector<AnnotatedSentence> parse_corpus(std::istream& in) {
  std::vector<AnnotatedSentence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    const auto text = obj.find("text");
    if (text == obj.end() || !text->is_string()) throw ParseError(line_no, "missing string field \"text\"");
    AnnotatedSentence s;
    s.text = text->get<std::string>();
    if (trim(s.text).empty()) throw ParseError(line_no, "empty text");
    const auto val = obj.find("valence");
    if (val != obj.end() && !val->is_null()) {
      if (!val->is_number()) throw ParseError(line_no, "\"valence\" must be a number");
      const double v = val->get<double>();
      if (!in_scale(v)) {
        throw RangeError("line " + std::to_string(line_no) + ": valence " + std::to_string(v) + " outside [1,9]");
      }
      s.sentence_valence = ValenceRating(v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AnnotatedSentence> load_corpus(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  return parse_corpus(in);
}

// ---- Vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* t : {"[CLS]", "[MASK]", "[PAD]", "[UNK]"}) add(t);
}

std::uint32_t Vocabulary::add(const std::string& token) {
  const auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::uint32_t Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::write(std::ostream& out) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

std::uint64_t Vocabulary::hash() const {
  std::ostringstream os;
  write(os);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Vocabulary Vocabulary::read(std::istream& in) {
  Vocabulary v;
  v.tokens_.clear();
  v.index_.clear();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(line_no, "expected token<TAB>id");
    std::uint64_t id = 0;
    const std::string_view num = std::string_view(line).substr(tab + 1);
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), id);
    if (ec != std::errc() || ptr != num.data() + num.size()) throw ParseError(line_no, "bad id");
    if (id != v.tokens_.size()) throw ParseError(line_no, "ids must be dense and ascending");
    v.add(line.substr(0, tab));
    if (v.tokens_.size() != id + 1) throw ParseError(line_no, "duplicate token");
  }
  const Vocabulary reserved;
  if (v.tokens_.size() < kReserved ||
      !std::equal(reserved.tokens_.begin(), reserved.tokens_.end(), v.tokens_.begin())) {
    throw ParseError(line_no, "reserved tokens must occupy ids 0..3");
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  return read(in);
}

Vocabulary build_vocabulary(const std::vector<AnnotatedSentence>& corpus, std::size_t min_count) {
  if (corpus.empty()) throw EmptyInputError("build_vocabulary: empty corpus");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const AnnotatedSentence& s : corpus) {
    for (WordSpan& w : split_words(s.text)) {
      ++counts[std::move(w.word)];
      ++total;
    }
  }
  if (total == 0) throw EmptyInputError("build_vocabulary: corpus contains no tokens");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [token, count] : ranked) {
    if (count >= min_count) vocab.add(token);
  }
  return vocab;
}

// ---- Tokenization -------------------------------------------------------------

std::vector<WordSpan> split_words(std::string_view text) {
  std::vector<WordSpan> words;
  std::size_t i = 0;
  const auto flush = [&](std::size_t begin, std::size_t end) {
    if (end > begin) words.push_back(WordSpan{ascii_lower(text.substr(begin, end - begin)), begin, end});
  };
  std::size_t start = 0;
  for (; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 128 && std::isspace(c)) {
      flush(start, i);
      start = i + 1;
    } else if (c < 128 && std::ispunct(c)) {
      flush(start, i);
      flush(i, i + 1);
      start = i + 1;
    }
  }
  flush(start, text.size());
  return words;
}

TokenizedSentence tokenize(const AnnotatedSentence& sentence, const Vocabulary& vocab, const Lexicon& lexicon,
                           std::size_t max_len, const SubwordSplitter& splitter) {
  if (max_len < 2) throw ParameterError("tokenize: max_len must be at least 2");
  TokenizedSentence out;
  out.token_ids.push_back(Vocabulary::kCls);
  out.token_valences.push_back(sentence.sentence_valence);
  out.surface_spans.emplace_back(0, 0);
  for (const WordSpan& w : split_words(sentence.text)) {
    if (out.size() >= max_len) break;
    const ValenceRating v = lexicon.lookup(w.word);
    if (!splitter) {
      out.token_ids.push_back(vocab.id(w.word));
      out.token_valences.push_back(v);
      out.surface_spans.emplace_back(w.begin, w.end);
      continue;
    }
    const std::vector<std::string> pieces = splitter(w.word);
    std::size_t joined = 0;
    for (const std::string& p : pieces) joined += p.size();
    const bool contiguous = joined == w.word.size();
    std::size_t offset = w.begin;
    for (const std::string& p : pieces) {
      if (out.size() >= max_len) break;
      out.token_ids.push_back(vocab.id(p));
      out.token_valences.push_back(v);
      if (contiguous) {
        out.surface_spans.emplace_back(offset, offset + p.size());
        offset += p.size();
      } else {
        out.surface_spans.emplace_back(w.begin, w.end);
      }
    }
  }
  return out;
}

std::vector<TokenizedSentence> tokenize_all(const std::vector<AnnotatedSentence>& corpus, const Vocabulary& vocab,
                                            const Lexicon& lexicon, std::size_t max_len) {
  std::vector<TokenizedSentence> out;
  out.reserve(corpus.size());
  for (const AnnotatedSentence& s : corpus) out.push_back(tokenize(s, vocab, lexicon, max_len));
  return out;
}

}  // namespace softmcl
