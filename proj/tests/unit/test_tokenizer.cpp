#include <string>
#include <vector>

#include "support.hpp"
#include "tesu/tokenizer.hpp"

using namespace tesu;

TEST_CASE("build_vocab ranks by frequency") {
  const std::vector<std::string> corpus = {"a a b"};
  const Vocab v = build_vocab(corpus, 6);
  REQUIRE(v.size() == 6);
  CHECK(v.word(kPadId) == "<pad>");
  CHECK(v.word(kBosId) == "<bos>");
  CHECK(v.word(kEosId) == "<eos>");
  CHECK(v.word(kUnkId) == "<unk>");
  CHECK(v.word(4) == "a");
  CHECK(v.word(5) == "b");
}

TEST_CASE("build_vocab breaks ties lexicographically") {
  const std::vector<std::string> corpus = {"b a"};
  const Vocab v = build_vocab(corpus, 6);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
}

TEST_CASE("build_vocab caps the size and rejects empty corpora") {
  const std::vector<std::string> corpus = {"c c c b b a"};
  const Vocab v = build_vocab(corpus, 6);
  CHECK(v.size() == 6);
  CHECK(!v.contains("a"));
  const std::vector<std::string> empty = {"", "  ,. "};
  CHECK_KIND(build_vocab(empty, 10), ErrorKind::kInvalidArgument);
}

TEST_CASE("out-of-vocabulary words encode to UNK") {
  const std::vector<std::string> corpus = {"the cat"};
  const Vocab v = build_vocab(corpus, 10);
  const TokenSeq s = encode("the dog", v);
  REQUIRE(s.size() == 2);
  CHECK(s.ids[1] == kUnkId);
  CHECK(s.words[1] == "dog");
}

TEST_CASE("normalization lowercases and strips punctuation") {
  CHECK(normalize_text("Hello, world") == "hello world");
  CHECK(normalize_text("  It's   OK!  ") == "its ok");
  const std::vector<std::string> corpus = {"hello world"};
  const Vocab v = build_vocab(corpus, 10);
  const TokenSeq s = encode("Hello, world", v);
  CHECK(s.ids == encode("hello world", v).ids);
}

TEST_CASE("empty text encodes to an empty sequence") {
  const Vocab v;
  CHECK(encode("", v).empty());
  const TokenSeq framed = encode("", v, true);
  CHECK(framed.ids == std::vector<int>{kBosId, kEosId});
  CHECK(framed.words.empty());
}

TEST_CASE("round trip of in-vocabulary text") {
  const std::vector<std::string> corpus = {"the red fox jumps over the lazy dog"};
  const Vocab v = build_vocab(corpus, 50);
  const std::string text = "The lazy fox, jumps!";
  CHECK(decode(encode(text, v, true), v) == normalize_text(text));
}

TEST_CASE("vocab bytes are deterministic and round trip") {
  const std::vector<std::string> corpus = {"one two two three three three", "four"};
  const Vocab a = build_vocab(corpus, 20), b = build_vocab(corpus, 20);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.serialize() == "three\ntwo\nfour\none\n");
  const Vocab c = Vocab::parse(a.serialize());
  CHECK(c.words() == a.words());
  CHECK_KIND(Vocab::parse("a\n\nb\n"), ErrorKind::kFormat);
  CHECK_KIND(Vocab::parse("a\na\n"), ErrorKind::kFormat);
}
