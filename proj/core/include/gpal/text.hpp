#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gpal::text {

using TokenId = std::int32_t;

/// Token <-> id bijection with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  Vocabulary();

  /// Non-reserved tokens in id order (reserved ids are prepended here).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(TokenId id) const;  // throws on out-of-range ids
  bool contains(const std::string& token) const;
  static bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(kNumSpecials); }

  /// Whitespace-split, case-preserving; unknown words map to unk.
  std::vector<TokenId> tokenize(const std::string& text) const;
  /// Space-joined token strings. Out-of-range ids throw.
  std::string detokenize(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

std::vector<std::string> split_whitespace(const std::string& text);

struct TextPair {
  std::string source;
  std::string target;
};

struct Corpus {
  std::vector<TextPair> pairs;
  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

enum class Side { Source, Target };

/// One pair per line, UTF-8, LF endings, `source<TAB>target`.
Corpus load_tsv(const std::string& path);
void save_tsv(const Corpus& corpus, const std::string& path);

/// Tokens ranked by corpus frequency, ties broken lexicographically, reserved
/// ids prepended, truncated at max_size (total size including the reserved ids).
Vocabulary build_vocab(const Corpus& corpus, Side side, std::size_t max_size);

/// Token-id view of one pair: content ids plus a terminal eos on both sides.
struct SentencePair {
  std::vector<TokenId> source;
  std::vector<TokenId> reference;
  std::string source_text;
  std::string reference_text;
};

SentencePair encode_pair(const TextPair& pair, const Vocabulary& source_vocab,
                         const Vocabulary& target_vocab);

/// Ids without the reserved tokens (drops pad/bos/eos/unk).
std::vector<TokenId> strip_specials(std::span<const TokenId> ids);

}  // namespace gpal::text
