#include "xmreid/text.hpp"

#include <algorithm>
#include <cctype>

#include "json.hpp"

namespace xmreid {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      continue;
    } else {
      current += static_cast<char>(c < 128 ? std::tolower(c) : c);
    }
  }
  flush();
  return out;
}

Dictionary Dictionary::build(std::span<const std::string> corpus, int min_count) {
  if (corpus.empty()) throw ValidationError("cannot build a dictionary from an empty corpus");
  Dictionary d;
  d.min_count_ = min_count;
  std::map<std::string, int, std::less<>> counts;
  std::uint64_t h = fnv1a("");
  for (const auto& sentence : corpus) {
    h = fnv1a(sentence, h);
    h = fnv1a("\n", h);
    for (auto& w : tokenize(sentence)) counts[w]++;
  }
  d.corpus_hash_ = h;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) {
      d.words_.push_back(w);
      d.index_.emplace(w, static_cast<int>(d.words_.size()));
    }
  }
  return d;
}

std::optional<int> Dictionary::find(std::string_view word) const {
  std::string folded(word);
  for (auto& c : folded) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 128) c = static_cast<char>(std::tolower(u));
  }
  auto it = index_.find(folded);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Dictionary::index_of(std::string_view word) const {
  return find(word).value_or(unknown_index());
}

const std::string& Dictionary::word(int index) const {
  static const std::string padding;
  static const std::string unknown = "<unk>";
  if (index == 0) return padding;
  if (index == unknown_index()) return unknown;
  if (index < 0 || index > size()) throw ValidationError("word index out of range");
  return words_[static_cast<std::size_t>(index - 1)];
}

std::string Dictionary::to_json() const {
  json j;
  json words = json::object();
  for (std::size_t i = 0; i < words_.size(); ++i) words[words_[i]] = i + 1;
  j["words"] = std::move(words);
  j["min_count"] = min_count_;
  j["corpus_hash"] = hex64(corpus_hash_);
  j["size"] = words_.size();
  return j.dump();
}

Dictionary Dictionary::from_json(std::string_view text) {
  Dictionary d;
  try {
    const json j = json::parse(text);
    d.min_count_ = j.at("min_count").get<int>();
    d.corpus_hash_ = std::stoull(j.at("corpus_hash").get<std::string>(), nullptr, 16);
    const auto& words = j.at("words");
    d.words_.assign(words.size(), {});
    for (const auto& [w, idx] : words.items()) {
      const int i = idx.get<int>();
      if (i < 1 || i > static_cast<int>(words.size()) || !d.words_[static_cast<std::size_t>(i - 1)].empty()) {
        throw FormatError("dictionary indices must be a permutation of 1..V");
      }
      d.words_[static_cast<std::size_t>(i - 1)] = w;
    }
    for (std::size_t i = 0; i < d.words_.size(); ++i) d.index_.emplace(d.words_[i], static_cast<int>(i + 1));
  } catch (const json::exception& e) {
    throw FormatError(std::string("dictionary: ") + e.what());
  }
  return d;
}

TokenSequence encode_sentence(std::string_view sentence, const Dictionary& dict, int max_length) {
  if (max_length < 1) throw ValidationError("max_length must be >= 1");
  const auto words = tokenize(sentence);
  if (words.empty()) throw ValidationError("sentence is empty after tokenization");
  TokenSequence t;
  t.indices.assign(static_cast<std::size_t>(max_length), 0);
  t.true_length = std::min(static_cast<int>(words.size()), max_length);
  for (int i = 0; i < t.true_length; ++i) {
    t.indices[static_cast<std::size_t>(i)] = dict.index_of(words[static_cast<std::size_t>(i)]);
  }
  return t;
}

std::vector<std::string> decode_tokens(const TokenSequence& tokens, const Dictionary& dict) {
  std::vector<std::string> out;
  for (int idx : tokens.indices) {
    if (idx != 0) out.push_back(dict.word(idx));
  }
  return out;
}

TokenSequence augment_word_drop(const TokenSequence& tokens, double drop_prob, Rng& rng) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ValidationError("drop_prob must be in [0, 1)");
  std::vector<int> words;
  for (int idx : tokens.indices) {
    if (idx != 0) words.push_back(idx);
  }
  std::vector<int> kept;
  for (int w : words) {
    if (!(rng.uniform() < drop_prob)) kept.push_back(w);
  }
  if (kept.empty() && !words.empty()) kept.push_back(words[rng.index(words.size())]);
  TokenSequence out;
  out.indices.assign(tokens.indices.size(), 0);
  std::copy(kept.begin(), kept.end(), out.indices.begin());
  out.true_length = static_cast<int>(kept.size());
  return out;
}

TokenSequence augment_zero_shift(const TokenSequence& tokens, Rng& rng) {
  std::vector<int> words;
  for (int idx : tokens.indices) {
    if (idx != 0) words.push_back(idx);
  }
  const std::size_t L = tokens.indices.size();
  if (words.size() > L) throw ValidationError("true_length exceeds max_length");
  const std::size_t k = rng.index(L - words.size() + 1);
  TokenSequence out;
  out.indices.assign(L, 0);
  std::copy(words.begin(), words.end(), out.indices.begin() + static_cast<std::ptrdiff_t>(k));
  out.true_length = static_cast<int>(words.size());
  return out;
}

EmbeddingTable::EmbeddingTable(int rows, int dim) : weights_(Matrix::Zero(rows, dim)) {
  if (rows < 2 || dim < 1) throw ValidationError("embedding table needs >= 2 rows and dim >= 1");
}

EmbeddingTable EmbeddingTable::random(int rows, int dim, Rng& rng) {
  EmbeddingTable t(rows, dim);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int r = 1; r < rows; ++r)
    for (int c = 0; c < dim; ++c) t.weights_(r, c) = sigma * rng.normal();
  return t;
}

EmbeddingTable EmbeddingTable::from_weights(Matrix weights, bool trainable) {
  if (weights.rows() < 2) throw ValidationError("embedding table needs >= 2 rows");
  if (!weights.row(0).isZero(0.0)) throw ValidationError("embedding padding row must be zero");
  EmbeddingTable t;
  t.weights_ = std::move(weights);
  t.trainable_ = trainable;
  return t;
}

Matrix embed_tokens(const TokenSequence& tokens, const EmbeddingTable& table) {
  Matrix out(tokens.max_length(), table.dim());
  for (int t = 0; t < tokens.max_length(); ++t) {
    const int idx = tokens.indices[static_cast<std::size_t>(t)];
    if (idx < 0 || idx >= table.rows()) {
      throw ValidationError("token index " + std::to_string(idx) + " outside embedding table of " +
                            std::to_string(table.rows()) + " rows");
    }
    out.row(t) = table.weights().row(idx);
  }
  return out;
}

void accumulate_embedding_gradient(const TokenSequence& tokens, const Matrix& grad_rows,
                                   Matrix& table_grad) {
  for (int t = 0; t < tokens.max_length(); ++t) {
    const int idx = tokens.indices[static_cast<std::size_t>(t)];
    if (idx != 0) table_grad.row(idx) += grad_rows.row(t);
  }
}

}  // namespace xmreid
