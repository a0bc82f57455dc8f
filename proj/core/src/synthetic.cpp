#include "gpal/synthetic.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace gpal::text {

namespace {

std::string word_name(const char* prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%03zu", prefix, i);
  return buf;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a_str(std::uint64_t h, const std::string& s) { return fnv1a(h, s.data(), s.size()); }

}  // namespace

std::string to_string(TargetLanguage lang) { return lang == TargetLanguage::L1 ? "l1" : "l2"; }

TargetLanguage target_language_from_string(const std::string& name) {
  if (name == "l1") return TargetLanguage::L1;
  if (name == "l2") return TargetLanguage::L2;
  throw std::invalid_argument("unknown target language: " + name);
}

SyntheticTaskSpec SyntheticTaskSpec::standard(std::uint64_t seed) {
  SyntheticTaskSpec spec;
  spec.seed = seed;
  spec.source_lexicon.reserve(spec.lexicon_size);
  spec.l1_lexicon.reserve(spec.lexicon_size);
  spec.l2_lexicon.reserve(spec.lexicon_size);
  for (std::size_t i = 0; i < spec.lexicon_size; ++i) {
    spec.source_lexicon.push_back(word_name("en", i));
    spec.l1_lexicon.push_back(word_name("fr", i));
    spec.l2_lexicon.push_back(word_name("de", i));
  }
  spec.l1_map.resize(spec.lexicon_size);
  spec.l2_map.resize(spec.lexicon_size);
  for (std::size_t i = 0; i < spec.lexicon_size; ++i) {
    spec.l1_map[i] = (7 * i + 13) % spec.lexicon_size;
    spec.l2_map[i] = (11 * i + 41) % spec.lexicon_size;
  }
  for (int start = 0; start < spec.num_classes; ++start) {
    for (int len = spec.min_len; len <= spec.max_len; ++len) {
      spec.templates.push_back({start, len});
    }
  }
  return spec;
}

void SyntheticTaskSpec::validate() const {
  if (source_lexicon.size() != lexicon_size || l1_lexicon.size() != lexicon_size ||
      l2_lexicon.size() != lexicon_size) {
    throw std::invalid_argument("synthetic spec: lexicon sizes disagree");
  }
  if (lexicon_size % static_cast<std::size_t>(num_classes) != 0) {
    throw std::invalid_argument("synthetic spec: lexicon size must be divisible by class count");
  }
  if (templates.empty()) throw std::invalid_argument("synthetic spec: no templates");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("synthetic spec: bad length range");

  auto check_injective = [&](const std::vector<std::size_t>& map, const char* name) {
    if (map.size() != lexicon_size) {
      throw std::invalid_argument(std::string("synthetic spec: map size mismatch for ") + name);
    }
    std::vector<bool> seen(lexicon_size, false);
    for (std::size_t to : map) {
      if (to >= lexicon_size || seen[to]) {
        throw std::invalid_argument(std::string("synthetic spec: map not injective for ") + name);
      }
      seen[to] = true;
    }
  };
  check_injective(l1_map, "l1");
  check_injective(l2_map, "l2");
}

std::uint64_t SyntheticTaskSpec::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv1a(h, &seed, sizeof(seed));
  h = fnv1a(h, &lexicon_size, sizeof(lexicon_size));
  h = fnv1a(h, &num_classes, sizeof(num_classes));
  h = fnv1a(h, &min_len, sizeof(min_len));
  h = fnv1a(h, &max_len, sizeof(max_len));
  h = fnv1a_str(h, reorder_rule);
  for (const auto& w : source_lexicon) h = fnv1a_str(h, w);
  for (const auto& w : l1_lexicon) h = fnv1a_str(h, w);
  for (const auto& w : l2_lexicon) h = fnv1a_str(h, w);
  for (std::size_t m : l1_map) h = fnv1a(h, &m, sizeof(m));
  for (std::size_t m : l2_map) h = fnv1a(h, &m, sizeof(m));
  for (const auto& t : templates) {
    h = fnv1a(h, &t.start_class, sizeof(t.start_class));
    h = fnv1a(h, &t.length, sizeof(t.length));
  }
  return h;
}

std::vector<std::string> translate_tokens(const SyntheticTaskSpec& spec,
                                          const std::vector<std::string>& source_tokens,
                                          TargetLanguage lang) {
  const auto& map = lang == TargetLanguage::L1 ? spec.l1_map : spec.l2_map;
  const auto& lexicon = lang == TargetLanguage::L1 ? spec.l1_lexicon : spec.l2_lexicon;

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < spec.source_lexicon.size(); ++i) index.emplace(spec.source_lexicon[i], i);

  std::vector<std::string> mapped;
  mapped.reserve(source_tokens.size());
  for (const std::string& tok : source_tokens) {
    auto it = index.find(tok);
    if (it == index.end()) throw std::invalid_argument("token not in source lexicon: " + tok);
    mapped.push_back(lexicon[map[it->second]]);
  }
  for (std::size_t i = 0; i + 1 < mapped.size(); i += 2) std::swap(mapped[i], mapped[i + 1]);
  return mapped;
}

std::vector<std::string> invert_translation(const SyntheticTaskSpec& spec,
                                            const std::vector<std::string>& target_tokens,
                                            TargetLanguage lang) {
  const auto& map = lang == TargetLanguage::L1 ? spec.l1_map : spec.l2_map;
  const auto& lexicon = lang == TargetLanguage::L1 ? spec.l1_lexicon : spec.l2_lexicon;

  std::unordered_map<std::string, std::size_t> inverse;
  for (std::size_t i = 0; i < map.size(); ++i) inverse.emplace(lexicon[map[i]], i);

  std::vector<std::string> unswapped = target_tokens;
  for (std::size_t i = 0; i + 1 < unswapped.size(); i += 2) std::swap(unswapped[i], unswapped[i + 1]);

  std::vector<std::string> out;
  out.reserve(unswapped.size());
  for (const std::string& tok : unswapped) {
    auto it = inverse.find(tok);
    if (it == inverse.end()) throw std::invalid_argument("token not in target lexicon: " + tok);
    out.push_back(spec.source_lexicon[it->second]);
  }
  return out;
}

Corpus generate_corpus(const SyntheticTaskSpec& spec, std::size_t n_pairs, TargetLanguage lang) {
  spec.validate();
  if (n_pairs == 0) throw std::invalid_argument("generate_corpus: n_pairs must be positive");

  const std::size_t class_size = spec.lexicon_size / static_cast<std::size_t>(spec.num_classes);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick_template(0, spec.templates.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_word(0, class_size - 1);

  Corpus corpus;
  corpus.pairs.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const SentenceTemplate& tpl = spec.templates[pick_template(rng)];
    std::vector<std::string> src;
    src.reserve(tpl.length);
    for (int i = 0; i < tpl.length; ++i) {
      const std::size_t cls = (static_cast<std::size_t>(tpl.start_class) + i) %
                              static_cast<std::size_t>(spec.num_classes);
      const std::size_t w = cls * class_size + pick_word(rng);
      src.push_back(spec.source_lexicon[w]);
    }
    const std::vector<std::string> tgt = translate_tokens(spec, src, lang);

    TextPair pair;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (i) pair.source.push_back(' ');
      pair.source += src[i];
    }
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      if (i) pair.target.push_back(' ');
      pair.target += tgt[i];
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

void write_corpus_manifest(const std::string& corpus_path, const SyntheticTaskSpec& spec,
                           std::size_t n_pairs, TargetLanguage lang) {
  nlohmann::ordered_json manifest;
  manifest["seed"] = spec.seed;
  manifest["spec_hash"] = spec.content_hash();
  manifest["n_pairs"] = n_pairs;
  manifest["target_language"] = to_string(lang);
  manifest["lexicon_size"] = spec.lexicon_size;
  manifest["num_classes"] = spec.num_classes;
  manifest["template_count"] = spec.templates.size();

  std::ofstream out(corpus_path + ".manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest for " + corpus_path);
  out << manifest.dump(2) << '\n';
}

}  // namespace gpal::text
