#include <doctest.h>

#include <filesystem>
#include <map>

#include "icdc/errors.hpp"
#include "icdc/rng.hpp"
#include "icdc/vocab.hpp"

using namespace icdc;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("vocab");

TEST_CASE("code vocab applies the frequency cutoff") {
  CodeVocab v = CodeVocab::build({{"A01", 5}, {"B02", 1}}, 2);
  CHECK(v.contains("A01"));
  CHECK_FALSE(v.contains("B02"));
  CHECK(v.lookup("B02") == CodeVocab::kUnk);
  CHECK(v.size() == CodeVocab::kNumSpecials + 1);
}

TEST_CASE("code vocab with min_frequency 1 keeps everything") {
  CodeVocab v = CodeVocab::build({{"A01", 5}, {"B02", 1}, {"C03", 2}}, 1);
  CHECK(v.size() == CodeVocab::kNumSpecials + 3);
  CHECK_THROWS_AS(CodeVocab::build({}, 1), DataError);
}

TEST_CASE("code vocab id assignment is deterministic: count desc, code asc") {
  std::map<std::string, std::size_t> counts = {{"Z99", 3}, {"A01", 3}, {"M50", 7}};
  CodeVocab v1 = CodeVocab::build(counts, 1);
  CodeVocab v2 = CodeVocab::build(counts, 1);
  CHECK(v1.lookup("M50") == CodeVocab::kNumSpecials);
  CHECK(v1.lookup("A01") == CodeVocab::kNumSpecials + 1);
  CHECK(v1.lookup("Z99") == CodeVocab::kNumSpecials + 2);
  for (const auto& code : {"M50", "A01", "Z99"}) CHECK(v1.lookup(code) == v2.lookup(code));
}

TEST_CASE("code vocab round trips through its file format") {
  CodeVocab v = CodeVocab::build({{"A01", 5}, {"B02.1", 2}}, 1);
  auto path = fs::temp_directory_path() / "icdc_codevocab_test.tsv";
  v.save(path);
  CodeVocab back = CodeVocab::load(path);
  CHECK(back.size() == v.size());
  CHECK(back.lookup("B02.1") == v.lookup("B02.1"));
  fs::remove(path);
}

namespace {

// Independent oracle: count adjacent symbol pairs of the classic string by
// brute force under the same (count desc, pair asc) rule.
std::pair<std::string, std::string> brute_force_first_merge(const std::string& word) {
  std::vector<std::string> syms;
  for (char c : word) syms.emplace_back(1, c);
  syms.emplace_back(1, TextVocab::kWordEnd);
  std::map<std::pair<std::string, std::string>, int> counts;
  for (std::size_t i = 0; i + 1 < syms.size(); ++i) ++counts[{syms[i], syms[i + 1]}];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

}  // namespace

TEST_CASE("bpe first merge on the classic string matches brute-force pair counting") {
  const std::string corpus_str = "aaabdaaabac";
  const std::size_t base = TextVocab::kNumSpecials + 4 + 1;  // specials + {a,b,c,d} + word end
  TextVocab v = TextVocab::train_bpe({corpus_str}, base + 3);
  REQUIRE(v.merges().size() == 3);
  CHECK(v.merges()[0] == brute_force_first_merge(corpus_str));
  CHECK(v.merges()[0] == std::pair<std::string, std::string>{"a", "a"});
}

TEST_CASE("bpe with vocab_size at the floor does character-level tokenization") {
  const std::size_t base = TextVocab::kNumSpecials + 4 + 1;
  TextVocab v = TextVocab::train_bpe({"aaabdaaabac"}, base);
  CHECK(v.merges().empty());
  auto ids = v.encode("ab", 16);
  CHECK(ids.size() == 4);  // CLS a b wordend
  CHECK_THROWS_AS(TextVocab::train_bpe({"aaabdaaabac"}, base - 1), DataError);
  CHECK_THROWS_AS(TextVocab::train_bpe({"", "  "}, 50), DataError);
}

TEST_CASE("bpe retraining on an identical corpus yields identical merges") {
  std::vector<std::string> corpus = {"patient presents with fever", "patient denies fever",
                                     "followup for fever and chills"};
  TextVocab v1 = TextVocab::train_bpe(corpus, 60);
  TextVocab v2 = TextVocab::train_bpe(corpus, 60);
  CHECK(v1.merges() == v2.merges());
  CHECK(v1.size() == 60);
}

TEST_CASE("encode places CLS first and respects max_len") {
  TextVocab v = TextVocab::train_bpe({"alpha beta gamma delta"}, 40);
  auto ids = v.encode("alpha beta gamma delta alpha beta", 5);
  CHECK(ids.size() == 5);
  CHECK(ids[0] == TextVocab::kCls);
  CHECK(v.encode("", 8) == std::vector<std::int32_t>{TextVocab::kCls});
  CHECK_THROWS_AS(v.encode("x", 1), DataError);
}

TEST_CASE("decode inverts encode on 1000 random in-alphabet strings") {
  TextVocab v = TextVocab::train_bpe({"the quick brown fox jumps over lazy dogs"}, 64);
  RngStream rng(2024, "roundtrip");
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  for (int trial = 0; trial < 1000; ++trial) {
    std::string text;
    const int words = 1 + static_cast<int>(rng.next_below(4));
    for (int w = 0; w < words; ++w) {
      if (w) text += ' ';
      const int len = 1 + static_cast<int>(rng.next_below(6));
      for (int i = 0; i < len; ++i) text += alphabet[rng.next_below(alphabet.size())];
    }
    CHECK(v.decode(v.encode(text, 4096)) == text);
  }
}

TEST_CASE("unknown characters encode to UNK") {
  TextVocab v = TextVocab::train_bpe({"abc"}, 16);
  auto ids = v.encode_word("a\x01z");
  CHECK(ids[1] == TextVocab::kUnk);  // control char
  CHECK(ids[2] == TextVocab::kUnk);  // z unseen in corpus
}

TEST_CASE("special ids survive save/load and stay distinct") {
  TextVocab v = TextVocab::train_bpe({"some sample text for the tokenizer"}, 64);
  auto vp = fs::temp_directory_path() / "icdc_textvocab_test.tsv";
  auto mp = fs::temp_directory_path() / "icdc_merges_test.txt";
  v.save(vp, mp);
  TextVocab back = TextVocab::load(vp, mp);
  CHECK(back.size() == v.size());
  CHECK(back.merges() == v.merges());
  CHECK(back.encode("sample text", 32) == v.encode("sample text", 32));
  std::vector<std::int32_t> specials = {TextVocab::kPad, TextVocab::kMask, TextVocab::kCls, TextVocab::kSep,
                                        TextVocab::kUnk, TextVocab::kPos,  TextVocab::kNeg};
  for (std::size_t i = 0; i < specials.size(); ++i) {
    for (std::size_t j = i + 1; j < specials.size(); ++j) CHECK(specials[i] != specials[j]);
  }
  fs::remove(vp);
  fs::remove(mp);
}

TEST_SUITE_END();
