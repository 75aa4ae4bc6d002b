#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmreid/common.hpp"
#include "xmreid/rng.hpp"

namespace xmreid {

// Whitespace split, ASCII punctuation stripped, ASCII case-folded.
std::vector<std::string> tokenize(std::string_view sentence);

// Word -> index for indices 1..V. Index 0 is padding and V+1 the unknown word.
class Dictionary {
 public:
  Dictionary() = default;

  // Words counted over the tokenized corpus; those seen fewer than min_count
  // times are dropped; the rest are indexed in lexicographic order.
  static Dictionary build(std::span<const std::string> corpus, int min_count = 1);

  int size() const { return static_cast<int>(words_.size()); }
  int unknown_index() const { return size() + 1; }
  int row_count() const { return size() + 2; }  // padding + words + unknown

  // Case-folded lookup; out-of-vocabulary words map to unknown_index().
  int index_of(std::string_view word) const;
  std::optional<int> find(std::string_view word) const;
  // "" for padding, "<unk>" for the unknown index.
  const std::string& word(int index) const;

  int min_count() const { return min_count_; }
  std::uint64_t corpus_hash() const { return corpus_hash_; }

  std::string to_json() const;
  static Dictionary from_json(std::string_view text);

  bool operator==(const Dictionary& o) const {
    return words_ == o.words_ && min_count_ == o.min_count_ && corpus_hash_ == o.corpus_hash_;
  }

 private:
  std::vector<std::string> words_;  // words_[i] has index i + 1
  std::map<std::string, int, std::less<>> index_;
  int min_count_ = 1;
  std::uint64_t corpus_hash_ = 0;
};

inline constexpr int kDefaultMaxLength = 56;

struct TokenSequence {
  std::vector<int> indices;  // fixed length L_max, 0 = padding
  int true_length = 0;       // number of non-zero entries

  int max_length() const { return static_cast<int>(indices.size()); }
  bool operator==(const TokenSequence&) const = default;
};

// First min(n, max_length) word indices, then zeros.
TokenSequence encode_sentence(std::string_view sentence, const Dictionary& dict,
                              int max_length = kDefaultMaxLength);
std::vector<std::string> decode_tokens(const TokenSequence& tokens, const Dictionary& dict);

// Draws uniform() once per word (in order) and drops the word when the draw is
// below drop_prob. If every word was dropped, index(n) picks the survivor.
// Survivors are re-packed at the front.
TokenSequence augment_word_drop(const TokenSequence& tokens, double drop_prob, Rng& rng);

// Draws k = index(L_max - n + 1) and places k zeros before the word block.
TokenSequence augment_zero_shift(const TokenSequence& tokens, Rng& rng);

// (V + 2) x e_dim matrix; row 0 is the padding vector and stays zero.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int rows, int dim);
  // N(0, 1/dim) entries, padding row zero.
  static EmbeddingTable random(int rows, int dim, Rng& rng);
  static EmbeddingTable from_weights(Matrix weights, bool trainable = true);

  int rows() const { return static_cast<int>(weights_.rows()); }
  int dim() const { return static_cast<int>(weights_.cols()); }
  const Matrix& weights() const { return weights_; }
  bool trainable() const { return trainable_; }
  void set_trainable(bool t) { trainable_ = t; }

  // Optimizer access. Gradients from accumulate_embedding_gradient never touch
  // row 0, so updates keep the padding row at exactly zero.
  Matrix& mutable_weights() { return weights_; }

 private:
  Matrix weights_;
  bool trainable_ = true;
};

// L_max x e_dim, row t = table row tokens.indices[t].
Matrix embed_tokens(const TokenSequence& tokens, const EmbeddingTable& table);

// Accumulates dL/d(table) from dL/d(embedded rows); the padding row gets none.
void accumulate_embedding_gradient(const TokenSequence& tokens, const Matrix& grad_rows,
                                   Matrix& table_grad);

}  // namespace xmreid
