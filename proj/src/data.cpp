#include "slimlstm/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace slim {

EmbeddingTable make_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng, bool trainable) {
  if (vocab_size < 2) throw std::invalid_argument("embedding vocabulary must hold at least 2 rows");
  EmbeddingTable emb{init_matrix(rng, vocab_size, dim), trainable};
  for (auto& v : emb.E.row(kPadToken)) v = 0.0;
  return emb;
}

void embedding_scatter_add(Matrix& grad, std::span<const Token> tokens, const std::vector<Vector>& dxs) {
  if (tokens.size() != dxs.size()) {
    throw std::invalid_argument("embedding_scatter_add: " + std::to_string(tokens.size()) +
                                " tokens but " + std::to_string(dxs.size()) + " gradients");
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] == kPadToken) continue;
    auto row = grad.row(static_cast<std::size_t>(tokens[t]));
    const Vector& d = dxs[t];
    if (d.size() != row.size()) throw std::invalid_argument("embedding_scatter_add: width mismatch");
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += d[j];
  }
}

EmbeddingTable load_frozen_embedding(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  std::size_t rows = 0, dim = 0;
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error(path.string() + ": missing header line");
  {
    std::istringstream hs(header);
    if (!(hs >> rows >> dim) || dim == 0) {
      throw std::runtime_error(path.string() + ":1: header must be \"vocab dim\"");
    }
  }
  EmbeddingTable emb{Matrix(vocab.size(), dim), false};
  std::string line;
  std::size_t line_no = 1;
  std::size_t seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> values(dim);
    for (auto& v : values) {
      if (!(ls >> v)) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(dim) + " values");
      }
    }
    ++seen;
    if (!vocab.contains(word)) continue;
    const Token idx = vocab.index_of(word);
    std::copy(values.begin(), values.end(), emb.E.row(static_cast<std::size_t>(idx)).begin());
  }
  if (seen != rows) {
    throw std::runtime_error(path.string() + ": header declares " + std::to_string(rows) +
                             " rows, file has " + std::to_string(seen));
  }
  for (auto& v : emb.E.row(kPadToken)) v = 0.0;
  return emb;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : words_{"<pad>", "<oov>"} {}

void Vocabulary::add(std::string word) {
  if (index_.contains(word)) throw std::invalid_argument("duplicate vocabulary word '" + word + "'");
  index_.emplace(word, static_cast<Token>(words_.size()));
  words_.push_back(std::move(word));
}

Token Vocabulary::index_of(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kOovToken : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.contains(std::string(word)); }

const std::string& Vocabulary::word_at(Token index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= words_.size()) {
    throw std::out_of_range("vocabulary index " + std::to_string(index) + " out of range");
  }
  return words_[static_cast<std::size_t>(index)];
}

std::vector<Token> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<Token> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(index_of(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const Token> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (const Token id : ids) words.push_back(word_at(id));
  return words;
}

Vocabulary build_vocab(std::span<const TokenList> corpus, std::size_t max_words) {
  if (max_words < 3) throw std::invalid_argument("max_words must be >= 3");
  if (corpus.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : corpus) {
    for (const auto& w : doc) ++freq[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  // std::map iteration is already lexicographic, so a stable sort on count
  // alone leaves ties in lexicographic order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  const std::size_t keep = std::min(ranked.size(), max_words - 2);
  for (std::size_t i = 0; i < keep; ++i) vocab.add(ranked[i].first);
  return vocab;
}

std::vector<Token> pad_or_truncate(std::span<const Token> seq, std::size_t T) {
  if (T == 0) throw std::invalid_argument("pad_or_truncate: T must be >= 1");
  std::vector<Token> out(T, kPadToken);
  if (seq.size() >= T) {
    std::copy(seq.end() - static_cast<std::ptrdiff_t>(T), seq.end(), out.begin());
  } else {
    std::copy(seq.begin(), seq.end(), out.begin() + static_cast<std::ptrdiff_t>(T - seq.size()));
  }
  return out;
}

void SequenceBatch::push_back(std::span<const Token> row, int label) {
  if (row.size() != T) {
    throw std::invalid_argument("sequence of length " + std::to_string(row.size()) +
                                " pushed into batch with T=" + std::to_string(T));
  }
  tokens.insert(tokens.end(), row.begin(), row.end());
  labels.push_back(label);
}

SequenceBatch SequenceBatch::select(std::span<const std::size_t> indices) const {
  SequenceBatch out;
  out.T = T;
  out.tokens.reserve(indices.size() * T);
  out.labels.reserve(indices.size());
  for (const auto i : indices) out.push_back(row(i), labels.at(i));
  return out;
}

void SequenceBatch::validate(std::size_t vocab_size) const {
  if (T == 0) throw std::invalid_argument("sequence batch has T=0");
  if (tokens.size() != labels.size() * T) {
    throw std::invalid_argument("sequence batch holds " + std::to_string(tokens.size()) +
                                " tokens for " + std::to_string(labels.size()) + " rows of length " +
                                std::to_string(T));
  }
  for (const Token tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size) {
      throw std::invalid_argument("token " + std::to_string(tok) + " outside vocabulary of " +
                                  std::to_string(vocab_size));
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic tasks

std::string_view to_string(SynthTask kind) {
  switch (kind) {
    case SynthTask::keyword_count:
      return "keyword_count";
    case SynthTask::first_token_class:
      return "first_token_class";
    case SynthTask::majority_vote:
      return "majority_vote";
  }
  return "?";
}

SynthTask parse_synth_task(std::string_view name) {
  if (name == "keyword_count") return SynthTask::keyword_count;
  if (name == "first_token_class") return SynthTask::first_token_class;
  if (name == "majority_vote") return SynthTask::majority_vote;
  throw std::invalid_argument("unknown synthetic task '" + std::string(name) + "'");
}

int keyword_count_label(std::span<const Token> seq) {
  const auto pos = std::count(seq.begin(), seq.end(), kPositiveMarker);
  const auto neg = std::count(seq.begin(), seq.end(), kNegativeMarker);
  return pos > neg ? 1 : 0;
}

int first_token_label(std::span<const Token> seq, std::size_t classes) {
  if (seq.empty()) return -1;
  const Token c = seq.front() - kFirstClassMarker;
  return (c >= 0 && static_cast<std::size_t>(c) < classes) ? c : -1;
}

int majority_vote_label(std::span<const Token> seq, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (const Token tok : seq) {
    const Token c = tok - kFirstClassMarker;
    if (c >= 0 && static_cast<std::size_t>(c) < classes) ++counts[static_cast<std::size_t>(c)];
  }
  const auto best = std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), *best) != 1) return -1;
  return static_cast<int>(best - counts.begin());
}

namespace {

class SynthGenerator {
 public:
  SynthGenerator(SynthTask kind, std::size_t T, std::size_t vocab, std::size_t classes, Rng& rng)
      : kind_(kind), T_(T), classes_(classes), rng_(rng) {
    const std::size_t markers = kind == SynthTask::keyword_count ? 2 : classes;
    for (Token tok = 1; static_cast<std::size_t>(tok) < vocab; ++tok) {
      const bool is_marker = tok >= kFirstClassMarker &&
                             static_cast<std::size_t>(tok) < kFirstClassMarker + markers;
      if (!is_marker) fillers_.push_back(tok);
    }
    // Upper bound on how many markers of one kind a sequence carries; all
    // markers of a sequence always fit in T positions.
    max_count_ = std::max<std::size_t>(1, std::min<std::size_t>(6, T / (markers + 2)));
  }

  std::vector<Token> sample(int label) {
    std::vector<Token> seq(T_);
    for (auto& tok : seq) tok = fillers_[rng_.below(fillers_.size())];
    switch (kind_) {
      case SynthTask::keyword_count: {
        const std::size_t major = 1 + rng_.below(max_count_);
        const std::size_t minor = rng_.below(major);
        place(seq, label == 1 ? kPositiveMarker : kNegativeMarker, major,
              label == 1 ? kNegativeMarker : kPositiveMarker, minor);
        break;
      }
      case SynthTask::first_token_class:
        seq.front() = kFirstClassMarker + label;
        break;
      case SynthTask::majority_vote: {
        std::vector<std::size_t> counts(classes_);
        std::size_t others = 0;
        for (std::size_t c = 0; c < classes_; ++c) {
          if (static_cast<int>(c) == label) continue;
          counts[c] = rng_.below(max_count_);
          others = std::max(others, counts[c]);
        }
        counts[static_cast<std::size_t>(label)] = others + 1;
        std::vector<Token> markers;
        for (std::size_t c = 0; c < classes_; ++c) {
          markers.insert(markers.end(), counts[c], kFirstClassMarker + static_cast<Token>(c));
        }
        scatter(seq, markers);
        break;
      }
    }
    return seq;
  }

 private:
  void place(std::vector<Token>& seq, Token a, std::size_t na, Token b, std::size_t nb) {
    std::vector<Token> markers(na, a);
    markers.insert(markers.end(), nb, b);
    scatter(seq, markers);
  }

  // Writes markers at distinct random positions; excess markers are dropped
  // from the tail, which only ever removes minority markers.
  void scatter(std::vector<Token>& seq, const std::vector<Token>& markers) {
    std::vector<std::size_t> pos(seq.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    rng_.shuffle(pos);
    const std::size_t k = std::min(markers.size(), seq.size());
    for (std::size_t i = 0; i < k; ++i) seq[pos[i]] = markers[i];
  }

  SynthTask kind_;
  std::size_t T_;
  std::size_t classes_;
  Rng& rng_;
  std::vector<Token> fillers_;
  std::size_t max_count_;
};

}  // namespace

Dataset synth_generate(SynthTask kind, std::size_t n_samples, std::size_t T, std::size_t vocab_size,
                       Rng& rng, std::size_t classes) {
  if (kind == SynthTask::keyword_count) classes = 2;
  if (n_samples < 10) throw std::invalid_argument("synth_generate: n_samples must be >= 10");
  if (T < 2) throw std::invalid_argument("synth_generate: T must be >= 2");
  if (vocab_size < 4) throw std::invalid_argument("synth_generate: vocab_size must be >= 4");
  if (classes < 2) throw std::invalid_argument("synth_generate: need at least 2 classes");
  if (vocab_size < kFirstClassMarker + classes) {
    throw std::invalid_argument("synth_generate: vocab_size " + std::to_string(vocab_size) +
                                " too small for " + std::to_string(classes) + " class markers");
  }

  SynthGenerator gen(kind, T, vocab_size, classes, rng);
  const std::size_t n_train = (n_samples * 4 + 2) / 5;
  const std::size_t n_test = n_samples - n_train;

  Dataset data;
  data.vocab_size = vocab_size;
  data.classes = classes;
  data.train.T = T;
  data.test.T = T;

  std::set<std::vector<Token>> train_rows;
  for (std::size_t i = 0; i < n_train; ++i) {
    const int label = static_cast<int>(i % classes);
    auto seq = gen.sample(label);
    train_rows.insert(seq);
    data.train.push_back(seq, label);
  }
  constexpr std::size_t kMaxRejects = 10000;
  for (std::size_t i = 0; i < n_test; ++i) {
    const int label = static_cast<int>(i % classes);
    std::size_t rejects = 0;
    auto seq = gen.sample(label);
    while (train_rows.contains(seq)) {
      if (++rejects > kMaxRejects) {
        throw std::invalid_argument("synth_generate: sequence space too small for a disjoint test split");
      }
      seq = gen.sample(label);
    }
    data.test.push_back(seq, label);
  }

  auto shuffled = [&rng](const SequenceBatch& b) {
    std::vector<std::size_t> order(b.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    return b.select(order);
  };
  data.train = shuffled(data.train);
  data.test = shuffled(data.test);
  return data;
}

// ---------------------------------------------------------------------------
// TSV corpora

TokenList tokenize(std::string_view text) {
  TokenList out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (const char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      continue;
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

std::vector<LabeledText> load_tsv_corpus(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  std::vector<LabeledText> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (tab == std::string::npos) throw std::runtime_error(where + ": malformed line (no tab)");
    const std::string_view label_text(line.data(), tab);
    int label = -1;
    const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc() || ptr != label_text.data() + label_text.size() || label < 0 ||
        static_cast<std::size_t>(label) >= num_classes) {
      throw std::runtime_error(where + ": unknown label '" + std::string(label_text) + "'");
    }
    out.push_back({label, tokenize(std::string_view(line).substr(tab + 1))});
  }
  return out;
}

Dataset encode_corpus(std::vector<LabeledText> corpus, std::size_t max_words, std::size_t T,
                      std::size_t classes, Rng& rng, Vocabulary* vocab_out) {
  if (corpus.size() < 2) throw std::invalid_argument("corpus needs at least 2 examples");
  rng.shuffle(corpus);
  const std::size_t n_train = (corpus.size() * 4 + 2) / 5;
  std::vector<TokenList> train_docs;
  train_docs.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) train_docs.push_back(corpus[i].tokens);
  Vocabulary vocab = build_vocab(train_docs, max_words);

  Dataset data;
  data.vocab_size = vocab.size();
  data.classes = classes;
  data.train.T = T;
  data.test.T = T;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto ids = pad_or_truncate(vocab.encode(corpus[i].tokens), T);
    (i < n_train ? data.train : data.test).push_back(ids, corpus[i].label);
  }
  if (vocab_out) *vocab_out = std::move(vocab);
  return data;
}

}  // namespace slim
