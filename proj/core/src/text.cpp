#include "gpal/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gpal::text {

namespace {
const std::vector<std::string> kSpecialTokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  id_to_token_ = kSpecialTokens;
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const std::string& tok : tokens) {
    if (tok.empty()) throw std::invalid_argument("vocabulary token must be non-empty");
    if (v.token_to_id_.count(tok)) {
      throw std::invalid_argument("duplicate vocabulary token: " + tok);
    }
    v.token_to_id_.emplace(tok, static_cast<TokenId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(tok);
  }
  return v;
}

TokenId Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                            std::to_string(id_to_token_.size()));
  }
  return id_to_token_[id];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  std::istringstream is(text);
  while (is >> word) out.push_back(word);
  return out;
}

std::vector<TokenId> Vocabulary::tokenize(const std::string& text) const {
  if (text.empty()) throw std::invalid_argument("tokenize: empty text");
  std::vector<TokenId> ids;
  for (const std::string& w : split_whitespace(text)) ids.push_back(id_of(w));
  return ids;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token_of(ids[i]);
  }
  return out;
}

Corpus load_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing tab separator");
    }
    if (line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": more than one tab");
    }
    TextPair pair{line.substr(0, tab), line.substr(tab + 1)};
    if (pair.source.empty() || pair.target.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty source or target side");
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

void save_tsv(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const TextPair& p : corpus.pairs) {
    out << p.source << '\t' << p.target << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Vocabulary build_vocab(const Corpus& corpus, Side side, std::size_t max_size) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const TextPair& p : corpus.pairs) {
    const std::string& text = side == Side::Source ? p.source : p.target;
    for (const std::string& w : split_whitespace(text)) {
      // Reserved literals stay reserved.
      if (std::find(kSpecialTokens.begin(), kSpecialTokens.end(), w) != kSpecialTokens.end()) continue;
      ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  for (const auto& [tok, cnt] : ranked) {
    if (tokens.size() + Vocabulary::kNumSpecials >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocabulary::from_tokens(tokens);
}

SentencePair encode_pair(const TextPair& pair, const Vocabulary& source_vocab,
                         const Vocabulary& target_vocab) {
  SentencePair sp;
  sp.source_text = pair.source;
  sp.reference_text = pair.target;
  sp.source = source_vocab.tokenize(pair.source);
  sp.source.push_back(Vocabulary::kEos);
  sp.reference = target_vocab.tokenize(pair.target);
  sp.reference.push_back(Vocabulary::kEos);
  return sp;
}

std::vector<TokenId> strip_specials(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  for (TokenId id : ids) {
    if (!Vocabulary::is_special(id)) out.push_back(id);
  }
  return out;
}

}  // namespace gpal::text
