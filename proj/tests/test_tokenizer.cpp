#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "w2st/rng.hpp"
#include "w2st/tokenizer.hpp"

using namespace w2st;

TEST_CASE("split_words lowercases and separates punctuation") {
  CHECK(split_words("The Dragon, flew!") ==
        std::vector<std::string>{"the", "dragon", ",", "flew", "!"});
  CHECK(split_words("  \t\n").empty());
  CHECK(normalize_text("A  b.C") == "a b . c");
}

TEST_CASE("build_vocab orders by frequency then lexicographically") {
  const std::vector<std::string> corpus{"a a b"};
  const Vocab v = Vocab::build(corpus, 1, 100);
  CHECK(v.size() == 7);
  CHECK(v.id_of("a") == 5);
  CHECK(v.id_of("b") == 6);
  CHECK(v.token_of(token::kPad) == "<pad>");
  CHECK(v.token_of(token::kSep) == "<sep>");

  const std::vector<std::string> ties{"zeta beta alpha beta"};
  const Vocab t = Vocab::build(ties, 1, 100);
  CHECK(t.id_of("beta") == 5);
  CHECK(t.id_of("alpha") == 6);
  CHECK(t.id_of("zeta") == 7);
}

TEST_CASE("build_vocab thresholds, caps and validates") {
  const std::vector<std::string> one{"x"};
  CHECK(Vocab::build(one, 2, 100).size() == token::kNumReserved);
  const std::vector<std::string> many{"a a a b b c"};
  const Vocab capped = Vocab::build(many, 1, 6);
  CHECK(capped.size() == 6);
  CHECK(capped.id_of("a") == 5);
  CHECK(capped.id_of("b") == token::kUnk);
  CHECK_THROWS_AS(Vocab::build(many, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(Vocab::build({}, 1, 10), std::invalid_argument);
}

TEST_CASE("build_vocab is deterministic") {
  const std::vector<std::string> corpus{"the cat sat", "the dog ran, the end"};
  CHECK(Vocab::build(corpus, 1, 50) == Vocab::build(corpus, 1, 50));
}

TEST_CASE("encode and decode examples") {
  const std::vector<std::string> corpus{"a a b"};
  const Vocab v = Vocab::build(corpus, 1, 100);
  CHECK(v.encode("", true).ids == std::vector<int>{token::kBos, token::kEos});
  CHECK(v.encode("a b", false).ids == std::vector<int>{5, 6});
  CHECK(v.encode("a zzz", false).ids == std::vector<int>{5, token::kUnk});
  CHECK(v.decode(std::vector<int>{token::kBos, 5, 6, token::kEos}) == "a b");
  CHECK(v.decode(std::vector<int>{token::kBos, token::kEos}).empty());
  CHECK_THROWS_AS(v.decode(std::vector<int>{5, 99}), std::out_of_range);
  CHECK_THROWS_AS(v.decode(std::vector<int>{-1}), std::out_of_range);
}

TEST_CASE("round trip over in-vocabulary text") {
  const std::vector<std::string> corpus{"once upon a time , the fox ran . the owl slept !"};
  const Vocab v = Vocab::build(corpus, 1, 100);
  const auto words = split_words(corpus[0]);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::string text;
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
      std::string w = words[rng.below(words.size())];
      if (rng.below(3) == 0) w[0] = static_cast<char>(std::toupper(w[0]));
      text += w + (rng.below(2) ? " " : "  ");
    }
    CHECK(v.decode(v.encode(text, rng.below(2) == 0)) == normalize_text(text));
  }
}

TEST_CASE("vocabulary serialization is one token per line") {
  const std::vector<std::string> corpus{"b a a"};
  const Vocab v = Vocab::build(corpus, 1, 100);
  CHECK(v.serialize() == "<pad>\n<bos>\n<eos>\n<unk>\n<sep>\na\nb\n");
  CHECK(Vocab::deserialize(v.serialize()) == v);
  CHECK_THROWS(Vocab::deserialize("<pad>\n<bos>\n"));
  CHECK_THROWS(Vocab::deserialize("<bos>\n<pad>\n<eos>\n<unk>\n<sep>\n"));
  CHECK_THROWS(Vocab::deserialize("<pad>\n<bos>\n<eos>\n<unk>\n<sep>\na\na\n"));
}
