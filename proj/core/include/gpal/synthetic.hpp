#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpal/text.hpp"

namespace gpal::text {

enum class TargetLanguage { L1, L2 };

std::string to_string(TargetLanguage lang);
TargetLanguage target_language_from_string(const std::string& name);

/// One sentence pattern: a starting word class and a length. Word classes
/// advance cyclically along the sentence, so a prefix pins the rest of the
/// class sequence and a small causal LM can learn the task.
struct SentenceTemplate {
  int start_class = 0;
  int length = 5;
};

/// Deterministic synthetic translation task. The target side is the source
/// passed through an injective per-language token map and then reordered by
/// swapping adjacent positions (1,2),(3,4),...; a trailing odd token stays.
/// The two target languages use disjoint lexicons.
struct SyntheticTaskSpec {
  std::uint64_t seed = 1;
  std::size_t lexicon_size = 1000;
  int num_classes = 20;
  int min_len = 5;
  int max_len = 15;
  std::string reorder_rule = "swap_adjacent_pairs";

  std::vector<std::string> source_lexicon;
  std::vector<std::string> l1_lexicon;
  std::vector<std::string> l2_lexicon;
  std::vector<std::size_t> l1_map;  // source word index -> L1 word index
  std::vector<std::size_t> l2_map;
  std::vector<SentenceTemplate> templates;

  /// The stock task: 1000-word lexicons, 20 classes, lengths 5..15.
  static SyntheticTaskSpec standard(std::uint64_t seed);

  void validate() const;
  std::uint64_t content_hash() const;
};

/// Pure function of (spec, n_pairs, language). The same spec and count yield
/// the identical source side for both target languages.
Corpus generate_corpus(const SyntheticTaskSpec& spec, std::size_t n_pairs, TargetLanguage lang);

/// Applies the bilingual map and adjacent-pair swap to source tokens.
std::vector<std::string> translate_tokens(const SyntheticTaskSpec& spec,
                                          const std::vector<std::string>& source_tokens,
                                          TargetLanguage lang);

/// Inverts translate_tokens exactly (re-swap, then inverse map).
std::vector<std::string> invert_translation(const SyntheticTaskSpec& spec,
                                            const std::vector<std::string>& target_tokens,
                                            TargetLanguage lang);

/// Sibling JSON manifest recording seed, spec hash, and counts.
void write_corpus_manifest(const std::string& corpus_path, const SyntheticTaskSpec& spec,
                           std::size_t n_pairs, TargetLanguage lang);

}  // namespace gpal::text
