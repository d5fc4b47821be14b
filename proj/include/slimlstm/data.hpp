#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slimlstm/numerics.hpp"

namespace slim {

using Token = std::int32_t;

inline constexpr Token kPadToken = 0;
inline constexpr Token kOovToken = 1;

/// Word-embedding lookup table. Row 0 is the padding row: it is zero and
/// never receives gradient.
template <std::floating_point Real>
struct BasicEmbeddingTable {
  BasicMatrix<Real> E;  // vocab_size x dim
  bool trainable = true;

  std::size_t vocab_size() const { return E.rows(); }
  std::size_t dim() const { return E.cols(); }
};

using EmbeddingTable = BasicEmbeddingTable<double>;

/// Glorot-uniform table with a zero padding row.
EmbeddingTable make_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng,
                              bool trainable = true);

/// x_t = E[token_t]. Throws on a token outside [0, vocab_size).
template <std::floating_point Real>
std::vector<BasicVector<Real>> embed_lookup(const BasicEmbeddingTable<Real>& emb,
                                            std::span<const Token> tokens) {
  std::vector<BasicVector<Real>> xs;
  xs.reserve(tokens.size());
  for (const Token tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= emb.vocab_size()) {
      throw std::out_of_range("token " + std::to_string(tok) + " outside embedding vocabulary of " +
                              std::to_string(emb.vocab_size()));
    }
    const auto row = emb.E.row(static_cast<std::size_t>(tok));
    xs.emplace_back(std::vector<Real>(row.begin(), row.end()));
  }
  return xs;
}

/// grad[token_t] += dxs[t] for every non-padding token.
void embedding_scatter_add(Matrix& grad, std::span<const Token> tokens, const std::vector<Vector>& dxs);

/// Reads "vocab dim" then one "token v1 ... vdim" line per row. Rows are
/// matched to vocab by token string; unmatched vocab entries stay zero.
/// The returned table is frozen.
class Vocabulary;
EmbeddingTable load_frozen_embedding(const std::filesystem::path& path, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Vocabulary and sequences

/// Token string -> index. 0 is padding, 1 is out-of-vocabulary, and kept
/// words start at 2 in descending frequency order (ties lexicographic).
class Vocabulary {
 public:
  Vocabulary();

  /// Total indices including the two reserved ones.
  std::size_t size() const { return words_.size(); }

  /// Index of a word, or kOovToken when absent.
  Token index_of(std::string_view word) const;

  /// Word at an index; the reserved indices map to "<pad>" and "<oov>".
  const std::string& word_at(Token index) const;

  bool contains(std::string_view word) const;

  std::vector<Token> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const Token> ids) const;

  void add(std::string word);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> index_;
};

using TokenList = std::vector<std::string>;

/// Keeps the max_words - 2 most frequent words. Throws on an empty corpus
/// or max_words < 3.
Vocabulary build_vocab(std::span<const TokenList> corpus, std::size_t max_words);

/// Left-pads with 0 or keeps the last T tokens.
std::vector<Token> pad_or_truncate(std::span<const Token> seq, std::size_t T);

/// Fixed-length token rows plus one label per row.
struct SequenceBatch {
  std::size_t T = 0;
  std::vector<Token> tokens;  // size() * T, row-major
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const Token> row(std::size_t i) const { return {tokens.data() + i * T, T}; }

  void push_back(std::span<const Token> row, int label);

  /// Rows selected by index, in the given order.
  SequenceBatch select(std::span<const std::size_t> indices) const;

  /// Throws unless every row has length T and every token is < vocab_size.
  void validate(std::size_t vocab_size) const;
};

struct Dataset {
  SequenceBatch train;
  SequenceBatch test;
  std::size_t vocab_size = 0;
  std::size_t classes = 2;
};

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class SynthTask { keyword_count, first_token_class, majority_vote };

std::string_view to_string(SynthTask kind);
SynthTask parse_synth_task(std::string_view name);

/// Token ids used by the generators. Markers start at 2; everything else in
/// [1, vocab_size) is filler.
inline constexpr Token kPositiveMarker = 2;
inline constexpr Token kNegativeMarker = 3;
inline constexpr Token kFirstClassMarker = 2;

/// Labelling rules, usable on any token sequence.
int keyword_count_label(std::span<const Token> seq);
int first_token_label(std::span<const Token> seq, std::size_t classes);
/// Returns -1 when the most frequent marker is not unique.
int majority_vote_label(std::span<const Token> seq, std::size_t classes);

/// Generates n_samples sequences of length T with labels cycled evenly over
/// the classes, split 80/20 into train/test. No test row equals a train row.
/// keyword_count is always binary; the other tasks use `classes` markers.
Dataset synth_generate(SynthTask kind, std::size_t n_samples, std::size_t T, std::size_t vocab_size,
                       Rng& rng, std::size_t classes = 2);

// ---------------------------------------------------------------------------
// TSV corpora

struct LabeledText {
  int label = 0;
  TokenList tokens;
};

/// Lowercase, split on whitespace, strip ASCII punctuation, drop empties.
TokenList tokenize(std::string_view text);

/// One "label<TAB>text" example per line. Labels must be integers in
/// [0, num_classes). CRLF line endings are accepted.
std::vector<LabeledText> load_tsv_corpus(const std::filesystem::path& path, std::size_t num_classes);

/// Shuffles, splits 80/20, builds the vocabulary on the train part and
/// encodes both parts to fixed length T.
Dataset encode_corpus(std::vector<LabeledText> corpus, std::size_t max_words, std::size_t T,
                      std::size_t classes, Rng& rng, Vocabulary* vocab_out = nullptr);

}  // namespace slim
