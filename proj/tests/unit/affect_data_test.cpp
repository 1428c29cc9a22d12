#include "softmcl/affect_data.hpp"

#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gtest/gtest.h"
#include "softmcl/errors.hpp"

using namespace softmcl;

namespace {

Lexicon lexicon_from(const std::string& text) {
  std::istringstream in(text);
  return parse_lexicon(in, "test");
}

std::vector<AnnotatedSentence> corpus_from(const std::string& text) {
  std::istringstream in(text);
  return parse_corpus(in);
}

}  // namespace

TEST(valence_rating, bounds) {
  EXPECT_NO_THROW(ValenceRating(1.0));
  EXPECT_NO_THROW(ValenceRating(9.0));
  EXPECT_NO_THROW(ValenceRating(0.0));
  EXPECT_THROW(ValenceRating(0.5), RangeError);
  EXPECT_THROW(ValenceRating(9.01), RangeError);
  EXPECT_FALSE(ValenceRating::absent().present());
  EXPECT_TRUE(ValenceRating(5.0).present());
}

TEST(lexicon, parses_word_and_valence) {
  const Lexicon lex = lexicon_from("good\t7.89\n");
  ASSERT_EQ(lex.size(), 1u);
  EXPECT_DOUBLE_EQ(lex.lookup("good").value(), 7.89);
}

TEST(lexicon, extra_columns_and_crlf) {
  const Lexicon lex = lexicon_from("# word valence arousal\r\nCalm\t6.5\t2.1\t5.0\r\n");
  EXPECT_DOUBLE_EQ(lex.lookup("calm").value(), 6.5);
  EXPECT_DOUBLE_EQ(lex.lookup("CALM").value(), 6.5);
}

TEST(lexicon, comments_only_is_empty_input) {
  EXPECT_THROW(lexicon_from("# nothing here\n\n"), EmptyInputError);
  EXPECT_THROW(lexicon_from(""), EmptyInputError);
}

TEST(lexicon, duplicate_keeps_last) {
  const Lexicon lex = lexicon_from("bad\t3.24\nbad\t3.00\n");
  EXPECT_DOUBLE_EQ(lex.lookup("bad").value(), 3.00);
  EXPECT_EQ(lex.duplicates(), 1u);
}

TEST(lexicon, absent_word_is_sentinel) {
  const Lexicon lex = lexicon_from("good\t7.89\n");
  EXPECT_FALSE(lex.lookup("battery").present());
}

TEST(lexicon, malformed_lines) {
  try {
    lexicon_from("good\t7.89\nbroken line\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(lexicon_from("good\tseven\n"), ParseError);
  EXPECT_THROW(lexicon_from("good\t10\n"), ParseError);
}

TEST(lexicon, missing_file) {
  EXPECT_THROW(load_lexicon("/nonexistent/lexicon.tsv"), MissingInputError);
}

TEST(corpus, parses_text_and_valence) {
  const auto c = corpus_from("{\"text\":\"fine day\",\"valence\":7.0}\n");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].text, "fine day");
  EXPECT_DOUBLE_EQ(c[0].sentence_valence.value(), 7.0);
}

TEST(corpus, missing_valence_is_sentinel) {
  const auto c = corpus_from("{\"text\":\"plain line\"}\n");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_FALSE(c[0].sentence_valence.present());
}

TEST(corpus, out_of_range_valence) {
  EXPECT_THROW(corpus_from("{\"text\":\"x\",\"valence\":12}\n"), RangeError);
}

TEST(corpus, malformed_json_reports_line) {
  try {
    corpus_from("{\"text\":\"a\"}\n{not json\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(corpus_from("{\"valence\":3}\n"), ParseError);
}

TEST(vocabulary, frequency_then_lexicographic) {
  const std::vector<AnnotatedSentence> c{{"a b", {}}, {"a", {}}};
  const Vocabulary v = build_vocabulary(c, 1);
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("a"), 4u);
  EXPECT_EQ(v.id("b"), 5u);
  EXPECT_EQ(v.token(Vocabulary::kCls), v.tokens()[0]);
}

TEST(vocabulary, min_count_filters) {
  const std::vector<AnnotatedSentence> c{{"a b", {}}, {"a", {}}};
  const Vocabulary v = build_vocabulary(c, 2);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.id("a"), 4u);
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
}

TEST(vocabulary, empty_corpus) {
  EXPECT_THROW(build_vocabulary({}, 1), EmptyInputError);
}

TEST(vocabulary, save_load_round_trip) {
  const std::vector<AnnotatedSentence> c{{"the quick brown fox, the lazy dog!", {}}, {"quick quick", {}}};
  const Vocabulary v = build_vocabulary(c, 1);
  fixtures::TempDir dir("vocab");
  v.save(dir / "vocab.tsv");
  const Vocabulary back = Vocabulary::load(dir / "vocab.tsv");
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.hash(), v.hash());
  for (const auto& t : v.tokens()) EXPECT_EQ(back.id(t), v.id(t));
}

TEST(tokenize, lexicon_alignment) {
  const Lexicon lex = lexicon_from("long\t6.2\n");
  const AnnotatedSentence s{"The battery life is long", ValenceRating(6.0)};
  const Vocabulary v = build_vocabulary({s}, 1);
  const TokenizedSentence t = tokenize(s, v, lex, 128);
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(t.token_ids[0], Vocabulary::kCls);
  EXPECT_DOUBLE_EQ(t.token_valences[0].value(), 6.0);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_FALSE(t.token_valences[i].present());
  EXPECT_DOUBLE_EQ(t.token_valences[5].value(), 6.2);
}

TEST(tokenize, empty_text_is_cls_only) {
  const Lexicon lex = lexicon_from("good\t7.89\n");
  const AnnotatedSentence s{"", ValenceRating(3.0)};
  const TokenizedSentence t = tokenize(s, Vocabulary(), lex, 16);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.token_ids[0], Vocabulary::kCls);
  EXPECT_DOUBLE_EQ(t.sentence_valence().value(), 3.0);
}

TEST(tokenize, case_insensitive_repeats) {
  const Lexicon lex = lexicon_from("good\t7.89\n");
  const AnnotatedSentence s{"Good good GOOD", {}};
  const Vocabulary v = build_vocabulary({s}, 1);
  const TokenizedSentence t = tokenize(s, v, lex, 16);
  ASSERT_EQ(t.size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_EQ(t.token_ids[i], v.id("good"));
    EXPECT_DOUBLE_EQ(t.token_valences[i].value(), 7.89);
  }
}

TEST(tokenize, subword_pieces_share_word_valence) {
  const Lexicon lex = lexicon_from("unhappy\t2.5\n");
  const AnnotatedSentence s{"so unhappy", {}};
  Vocabulary v;
  v.add("so");
  v.add("un");
  v.add("##happy");
  const SubwordSplitter split = [](std::string_view w) -> std::vector<std::string> {
    if (w == "unhappy") return {"un", "##happy"};
    return {std::string(w)};
  };
  const TokenizedSentence t = tokenize(s, v, lex, 16, split);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_FALSE(t.token_valences[1].present());
  EXPECT_DOUBLE_EQ(t.token_valences[2].value(), 2.5);
  EXPECT_DOUBLE_EQ(t.token_valences[3].value(), 2.5);
  EXPECT_EQ(t.token_ids[2], v.id("un"));
}

TEST(tokenize, truncates_to_max_len) {
  const AnnotatedSentence s{"a b c d e f g", {}};
  const Vocabulary v = build_vocabulary({s}, 1);
  EXPECT_EQ(tokenize(s, v, Lexicon(), 4).size(), 4u);
  EXPECT_THROW(tokenize(s, v, Lexicon(), 1), ParameterError);
}

TEST(tokenize, present_valences_match_lexicon_words) {
  const Lexicon lex = lexicon_from("happy\t8.2\nsad\t2.1\nrain\t4.0\n");
  const std::vector<AnnotatedSentence> corpus{
      {"happy sad rain, and more rain!", {}}, {"nothing here", {}}, {"Sad. Happy? unknown", {}}};
  const Vocabulary v = build_vocabulary(corpus, 1);
  for (const auto& s : corpus) {
    const TokenizedSentence t = tokenize(s, v, lex, 64);
    std::size_t present = 0;
    for (std::size_t i = 1; i < t.size(); ++i) present += t.token_valences[i].present() ? 1 : 0;
    std::size_t in_lexicon = 0;
    for (const WordSpan& w : split_words(s.text)) in_lexicon += lex.contains(w.word) ? 1 : 0;
    EXPECT_EQ(present, in_lexicon);
    EXPECT_EQ(t.token_ids, tokenize(s, v, lex, 64).token_ids);
  }
}

TEST(split_words, punctuation_is_separate) {
  const auto w = split_words("Hi, there!");
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0].word, "hi");
  EXPECT_EQ(w[1].word, ",");
  EXPECT_EQ(w[2].word, "there");
  EXPECT_EQ(w[3].word, "!");
  EXPECT_EQ(w[2].begin, 4u);
  EXPECT_EQ(w[2].end, 9u);
}
