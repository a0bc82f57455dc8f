#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "gpal/synthetic.hpp"
#include "gpal/text.hpp"

using namespace gpal::text;

namespace {

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("reserved ids are pinned and tokenize round-trips") {
  Vocabulary v = Vocabulary::from_tokens({"the", "cat"});
  CHECK(v.id_of("<pad>") == 0);
  CHECK(v.id_of("<bos>") == 1);
  CHECK(v.id_of("<eos>") == 2);
  CHECK(v.id_of("<unk>") == 3);
  CHECK(v.size() == 6);

  auto ids = v.tokenize("the cat");
  CHECK(ids == std::vector<TokenId>{4, 5});
  CHECK(v.detokenize(ids) == "the cat");

  CHECK(v.tokenize("the dog") == std::vector<TokenId>{4, Vocabulary::kUnk});
  CHECK_THROWS(v.tokenize(""));
  std::vector<TokenId> bad = {99};
  CHECK_THROWS_AS(v.detokenize(bad), std::out_of_range);
}

TEST_CASE("build_vocab ranks by frequency then lexicographically") {
  Corpus c;
  c.pairs.push_back({"a a b", "x"});
  Vocabulary v = build_vocab(c, Side::Source, 100);
  CHECK(v.size() == 6);
  CHECK(v.id_of("a") == 4);
  CHECK(v.id_of("b") == 5);

  Corpus tie;
  tie.pairs.push_back({"b a", "x"});
  Vocabulary vt = build_vocab(tie, Side::Source, 100);
  CHECK(vt.id_of("a") == 4);
  CHECK(vt.id_of("b") == 5);

  Vocabulary capped = build_vocab(c, Side::Source, 5);
  CHECK(capped.size() == 5);
  CHECK(capped.id_of("b") == Vocabulary::kUnk);
}

TEST_CASE("1000 random in-vocabulary sentences round-trip exactly") {
  std::vector<std::string> words;
  for (int i = 0; i < 200; ++i) words.push_back("w" + std::to_string(i));
  Vocabulary v = Vocabulary::from_tokens(words);
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(1, 20), pick(0, 199);
  for (int s = 0; s < 1000; ++s) {
    std::string text;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      if (i) text.push_back(' ');
      text += words[pick(rng)];
    }
    CHECK(v.detokenize(v.tokenize(text)) == text);
  }
}

TEST_CASE("tsv load/save round-trip and error reporting") {
  const auto path = temp_file("gpal_textcore_roundtrip.tsv");

  Corpus c;
  c.pairs.push_back({"hello", "bonjour"});
  c.pairs.push_back({"good day", "bon jour"});
  save_tsv(c, path.string());
  Corpus back = load_tsv(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back.pairs[0].source == "hello");
  CHECK(back.pairs[0].target == "bonjour");

  {
    std::ofstream out(path, std::ios::binary);
    out << "no tab here\n";
  }
  CHECK_THROWS_WITH_AS(load_tsv(path.string()), doctest::Contains(":1:"), std::runtime_error);

  {
    std::ofstream out(path, std::ios::binary);
    out << "ok\tgood\n\tmissing\n";
  }
  CHECK_THROWS_WITH_AS(load_tsv(path.string()), doctest::Contains(":2:"), std::runtime_error);

  {
    std::ofstream out(path, std::ios::binary);
  }
  CHECK(load_tsv(path.string()).empty());

  std::filesystem::remove(path);
}

TEST_CASE("generated corpora are deterministic and byte-stable on disk") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(7);
  Corpus a = generate_corpus(spec, 200, TargetLanguage::L1);
  Corpus b = generate_corpus(spec, 200, TargetLanguage::L1);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.pairs[i].source == b.pairs[i].source);
    CHECK(a.pairs[i].target == b.pairs[i].target);
  }

  const auto p1 = temp_file("gpal_corpus_a.tsv");
  const auto p2 = temp_file("gpal_corpus_b.tsv");
  save_tsv(a, p1.string());
  save_tsv(b, p2.string());
  CHECK(read_file(p1) == read_file(p2));

  Corpus reload = load_tsv(p1.string());
  save_tsv(reload, p2.string());
  CHECK(read_file(p1) == read_file(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("translation rule: map token-wise then swap adjacent pairs") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(1);
  auto m = [&](const std::string& w) {
    std::size_t i = 0;
    while (spec.source_lexicon[i] != w) ++i;
    return spec.l1_lexicon[spec.l1_map[i]];
  };

  std::vector<std::string> even = {"en000", "en051", "en102", "en153"};
  auto tgt = translate_tokens(spec, even, TargetLanguage::L1);
  CHECK(tgt == std::vector<std::string>{m("en051"), m("en000"), m("en153"), m("en102")});

  std::vector<std::string> odd = {"en000", "en051", "en102"};
  auto tgt_odd = translate_tokens(spec, odd, TargetLanguage::L1);
  CHECK(tgt_odd == std::vector<std::string>{m("en051"), m("en000"), m("en102")});
}

TEST_CASE("translation rule is a bijection: inverse map plus re-swap recovers the source") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(3);
  Corpus c = generate_corpus(spec, 100, TargetLanguage::L2);
  for (const TextPair& p : c.pairs) {
    const auto tgt_tokens = split_whitespace(p.target);
    const auto recovered = invert_translation(spec, tgt_tokens, TargetLanguage::L2);
    std::string joined;
    for (std::size_t i = 0; i < recovered.size(); ++i) {
      if (i) joined.push_back(' ');
      joined += recovered[i];
    }
    CHECK(joined == p.source);
  }
}

TEST_CASE("the two target languages share sources but have disjoint lexicons") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(11);
  Corpus l1 = generate_corpus(spec, 50, TargetLanguage::L1);
  Corpus l2 = generate_corpus(spec, 50, TargetLanguage::L2);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(l1.pairs[i].source == l2.pairs[i].source);
    CHECK(l1.pairs[i].target != l2.pairs[i].target);
  }
  for (const auto& w : spec.l1_lexicon) {
    CHECK(std::find(spec.l2_lexicon.begin(), spec.l2_lexicon.end(), w) == spec.l2_lexicon.end());
  }
}

TEST_CASE("synthetic corpus vocabulary has lexicon size plus the four reserved ids") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(5);
  spec.validate();
  // Enough pairs that every lexicon word appears.
  Corpus c = generate_corpus(spec, 20000, TargetLanguage::L1);
  Vocabulary v = build_vocab(c, Side::Source, 100000);
  CHECK(v.size() == spec.lexicon_size + Vocabulary::kNumSpecials);
}

TEST_CASE("sentence lengths stay within the template range") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(9);
  Corpus c = generate_corpus(spec, 500, TargetLanguage::L1);
  for (const TextPair& p : c.pairs) {
    const auto n = split_whitespace(p.source).size();
    CHECK(n >= 5);
    CHECK(n <= 15);
    CHECK(split_whitespace(p.target).size() == n);
  }
}

TEST_CASE("encode_pair appends terminal eos on both sides") {
  Vocabulary v = Vocabulary::from_tokens({"a", "b"});
  SentencePair sp = encode_pair({"a b", "b a"}, v, v);
  CHECK(sp.source == std::vector<TokenId>{4, 5, Vocabulary::kEos});
  CHECK(sp.reference == std::vector<TokenId>{5, 4, Vocabulary::kEos});
  CHECK(strip_specials(sp.source) == std::vector<TokenId>{4, 5});
}

TEST_CASE("manifest is written next to the corpus") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(13);
  const auto path = temp_file("gpal_manifest_corpus.tsv");
  Corpus c = generate_corpus(spec, 10, TargetLanguage::L1);
  save_tsv(c, path.string());
  write_corpus_manifest(path.string(), spec, 10, TargetLanguage::L1);
  const std::string manifest = read_file(path.string() + ".manifest.json");
  CHECK(manifest.find("\"seed\": 13") != std::string::npos);
  CHECK(manifest.find("spec_hash") != std::string::npos);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".manifest.json");
}
