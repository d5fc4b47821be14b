#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "slimlstm/data.hpp"
#include "test_support.hpp"

namespace slim {
namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

// ---------------------------------------------------------------------------
// Vocabulary

TEST(Vocab, FrequencyOrderWithReservedSlots) {
  const std::vector<TokenList> corpus{{"a", "b", "a"}, {"c", "a"}};
  const Vocabulary v = build_vocab(corpus, 4);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v.index_of("a"), 2);
  EXPECT_EQ(v.word_at(0), "<pad>");
  EXPECT_EQ(v.word_at(1), "<oov>");
  // b and c tie on count; the lexicographically smaller one is kept.
  EXPECT_EQ(v.index_of("b"), 3);
  EXPECT_EQ(v.index_of("c"), kOovToken);
  EXPECT_FALSE(v.contains("c"));
}

TEST(Vocab, TieBreakIsLexicographic) {
  const std::vector<TokenList> corpus{{"zeta", "alpha", "mid", "mid"}};
  const Vocabulary v = build_vocab(corpus, 10);
  EXPECT_EQ(v.decode(std::vector<Token>{2, 3, 4}), (std::vector<std::string>{"mid", "alpha", "zeta"}));
}

TEST(Vocab, KeepsAtMostMaxWordsAndRejectsBadInput) {
  std::vector<TokenList> corpus(1);
  for (int i = 0; i < 50; ++i) corpus[0].push_back("w" + std::to_string(i));
  EXPECT_EQ(build_vocab(corpus, 12).size(), 12u);
  EXPECT_EQ(build_vocab(corpus, 500).size(), 52u);
  EXPECT_THROW(build_vocab(corpus, 2), std::invalid_argument);
  EXPECT_THROW(build_vocab(std::vector<TokenList>{}, 10), std::invalid_argument);
  Vocabulary v;
  v.add("x");
  EXPECT_THROW(v.add("x"), std::invalid_argument);
  EXPECT_THROW(v.word_at(5), std::out_of_range);
}

TEST(Vocab, EncodeDecodeRoundTripForKnownWords) {
  Rng rng(3);
  std::vector<TokenList> corpus(20);
  for (auto& doc : corpus) {
    for (int k = 0; k < 15; ++k) doc.push_back("t" + std::to_string(rng.below(30)));
  }
  const Vocabulary v = build_vocab(corpus, 1000);
  for (const auto& doc : corpus) EXPECT_EQ(v.decode(v.encode(doc)), doc);
  const std::vector<std::string> unknown{"never", "seen"};
  EXPECT_EQ(v.encode(unknown), (std::vector<Token>{kOovToken, kOovToken}));
}

// ---------------------------------------------------------------------------
// Padding

TEST(Pad, LeftPadsShortSequences) {
  EXPECT_EQ(pad_or_truncate(std::vector<Token>{5, 6}, 4), (std::vector<Token>{0, 0, 5, 6}));
}

TEST(Pad, KeepsLastTokensOfLongSequences) {
  EXPECT_EQ(pad_or_truncate(std::vector<Token>{1, 2, 3, 4, 5}, 3), (std::vector<Token>{3, 4, 5}));
  EXPECT_EQ(pad_or_truncate(std::vector<Token>{}, 2), (std::vector<Token>{0, 0}));
  EXPECT_THROW(pad_or_truncate(std::vector<Token>{1}, 0), std::invalid_argument);
}

TEST(Pad, IdempotentAndExactLength) {
  Rng rng(4);
  for (int k = 0; k < 200; ++k) {
    std::vector<Token> seq(rng.below(20));
    for (auto& t : seq) t = static_cast<Token>(1 + rng.below(50));
    const std::size_t T = 1 + rng.below(15);
    const auto once = pad_or_truncate(seq, T);
    ASSERT_EQ(once.size(), T);
    EXPECT_EQ(pad_or_truncate(once, T), once);
  }
}

// ---------------------------------------------------------------------------
// Embedding

TEST(Embedding, PaddingRowIsZeroAndLookupCopiesRows) {
  Rng rng(5);
  const EmbeddingTable emb = make_embedding(6, 3, rng);
  for (const double v : emb.E.row(0)) EXPECT_EQ(v, 0.0);
  const std::vector<Token> toks{0, 4, 4};
  const auto xs = embed_lookup(emb, toks);
  ASSERT_EQ(xs.size(), 3u);
  EXPECT_EQ(xs[0], Vector(3, 0.0));
  EXPECT_EQ(xs[1], xs[2]);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(xs[1][j], emb.E(4, j));
  EXPECT_THROW(embed_lookup(emb, std::vector<Token>{6}), std::out_of_range);
  EXPECT_THROW(embed_lookup(emb, std::vector<Token>{-1}), std::out_of_range);
}

TEST(Embedding, ScatterSkipsPaddingAndAccumulatesRepeats) {
  Matrix g(4, 2);
  const std::vector<Token> toks{0, 2, 2, 3};
  const std::vector<Vector> dx{{9, 9}, {1, 2}, {3, 4}, {5, 6}};
  embedding_scatter_add(g, toks, dx);
  EXPECT_EQ(g, Matrix(4, 2, {0, 0, 0, 0, 4, 6, 5, 6}));
  EXPECT_THROW(embedding_scatter_add(g, toks, std::vector<Vector>(3, Vector(2))), std::invalid_argument);
}

TEST(Embedding, FrozenLoaderMatchesRowsByWord) {
  test::TempDir dir("emb");
  write_file(dir / "e.txt", "3 2\nhello 1 2\nunused 3 4\nworld 5 6\n");
  Vocabulary v;
  v.add("world");
  v.add("hello");
  v.add("missing");
  const EmbeddingTable emb = load_frozen_embedding(dir / "e.txt", v);
  EXPECT_FALSE(emb.trainable);
  EXPECT_EQ(emb.E, Matrix(5, 2, {0, 0, 0, 0, 5, 6, 1, 2, 0, 0}));

  write_file(dir / "bad.txt", "2 2\nhello 1\n");
  EXPECT_NE(error_of([&] { load_frozen_embedding(dir / "bad.txt", v); }).find(":2:"), std::string::npos);
  write_file(dir / "short.txt", "3 2\nhello 1 2\n");
  EXPECT_THROW(load_frozen_embedding(dir / "short.txt", v), std::runtime_error);
  EXPECT_THROW(load_frozen_embedding(dir / "absent.txt", v), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Batches

TEST(Batch, PushSelectValidate) {
  SequenceBatch b;
  b.T = 2;
  b.push_back(std::vector<Token>{1, 2}, 0);
  b.push_back(std::vector<Token>{3, 4}, 1);
  EXPECT_THROW(b.push_back(std::vector<Token>{1}, 0), std::invalid_argument);
  const std::vector<std::size_t> idx{1, 1, 0};
  const auto s = b.select(idx);
  EXPECT_EQ(s.tokens, (std::vector<Token>{3, 4, 3, 4, 1, 2}));
  EXPECT_EQ(s.labels, (std::vector<int>{1, 1, 0}));
  EXPECT_NO_THROW(b.validate(5));
  EXPECT_THROW(b.validate(4), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Synthetic tasks

TEST(Synth, LabellingRules) {
  EXPECT_EQ(keyword_count_label(std::vector<Token>{2, 2, 2, 3, 7}), 1);
  EXPECT_EQ(keyword_count_label(std::vector<Token>{2, 3, 3}), 0);
  EXPECT_EQ(keyword_count_label(std::vector<Token>{2, 3}), 0);
  EXPECT_EQ(first_token_label(std::vector<Token>{3, 2, 2}, 3), 1);
  EXPECT_EQ(first_token_label(std::vector<Token>{9, 2}, 3), -1);
  EXPECT_EQ(majority_vote_label(std::vector<Token>{4, 4, 2, 3}, 3), 2);
  EXPECT_EQ(majority_vote_label(std::vector<Token>{4, 2}, 3), -1);
}

class SynthAllTasks : public ::testing::TestWithParam<SynthTask> {};

TEST_P(SynthAllTasks, LabelsFollowRuleAndAreBalanced) {
  const SynthTask kind = GetParam();
  const std::size_t classes = kind == SynthTask::keyword_count ? 2 : 3;
  Rng rng(6);
  const Dataset d = synth_generate(kind, 600, 20, 30, rng, classes);
  EXPECT_EQ(d.train.size(), 480u);
  EXPECT_EQ(d.test.size(), 120u);
  EXPECT_EQ(d.classes, classes);
  EXPECT_NO_THROW(d.train.validate(30));
  std::vector<std::size_t> counts(classes);
  for (const auto* split : {&d.train, &d.test}) {
    for (std::size_t i = 0; i < split->size(); ++i) {
      const auto row = split->row(i);
      int rule = 0;
      switch (kind) {
        case SynthTask::keyword_count: rule = keyword_count_label(row); break;
        case SynthTask::first_token_class: rule = first_token_label(row, classes); break;
        case SynthTask::majority_vote: rule = majority_vote_label(row, classes); break;
      }
      ASSERT_EQ(rule, split->labels[i]);
      for (const Token t : row) ASSERT_NE(t, kPadToken);
      ++counts[static_cast<std::size_t>(rule)];
    }
  }
  for (const auto c : counts) EXPECT_EQ(c, 600u / classes);
}

TEST_P(SynthAllTasks, SplitsAreDisjointAndSeedDeterministic) {
  Rng a(7), b(7), c(8);
  const Dataset da = synth_generate(GetParam(), 300, 15, 25, a, 3);
  const Dataset db = synth_generate(GetParam(), 300, 15, 25, b, 3);
  const Dataset dc = synth_generate(GetParam(), 300, 15, 25, c, 3);
  EXPECT_EQ(da.train.tokens, db.train.tokens);
  EXPECT_EQ(da.test.labels, db.test.labels);
  EXPECT_NE(da.train.tokens, dc.train.tokens);
  std::set<std::vector<Token>> train;
  for (std::size_t i = 0; i < da.train.size(); ++i) {
    train.emplace(da.train.row(i).begin(), da.train.row(i).end());
  }
  for (std::size_t i = 0; i < da.test.size(); ++i) {
    EXPECT_FALSE(train.contains(std::vector<Token>(da.test.row(i).begin(), da.test.row(i).end())));
  }
}

INSTANTIATE_TEST_SUITE_P(Tasks, SynthAllTasks,
                         ::testing::Values(SynthTask::keyword_count, SynthTask::first_token_class,
                                           SynthTask::majority_vote),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Synth, RejectsDegenerateRequests) {
  Rng rng(9);
  EXPECT_THROW(synth_generate(SynthTask::keyword_count, 9, 10, 10, rng), std::invalid_argument);
  EXPECT_THROW(synth_generate(SynthTask::keyword_count, 100, 1, 10, rng), std::invalid_argument);
  EXPECT_THROW(synth_generate(SynthTask::keyword_count, 100, 10, 3, rng), std::invalid_argument);
  EXPECT_THROW(synth_generate(SynthTask::majority_vote, 100, 10, 5, rng, 4), std::invalid_argument);
  EXPECT_THROW(synth_generate(SynthTask::first_token_class, 1000, 2, 4, rng, 2), std::invalid_argument);
  EXPECT_THROW(parse_synth_task("copy"), std::invalid_argument);
}

TEST(Synth, KeywordTaskIsLinearlySeparableOnCounts) {
  // Independent learner: bag-of-words logistic regression by gradient descent.
  Rng rng(10);
  const std::size_t V = 30;
  const Dataset d = synth_generate(SynthTask::keyword_count, 1000, 20, V, rng);
  auto counts = [&](const SequenceBatch& b, std::size_t i) {
    std::vector<double> x(V, 0.0);
    for (const Token t : b.row(i)) x[static_cast<std::size_t>(t)] += 1.0;
    return x;
  };
  std::vector<double> w(V, 0.0);
  double bias = 0;
  for (int it = 0; it < 400; ++it) {
    std::vector<double> gw(V, 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      const auto x = counts(d.train, i);
      double z = bias;
      for (std::size_t k = 0; k < V; ++k) z += w[k] * x[k];
      const double r = 1.0 / (1.0 + std::exp(-z)) - d.train.labels[i];
      for (std::size_t k = 0; k < V; ++k) gw[k] += r * x[k];
      gb += r;
    }
    for (std::size_t k = 0; k < V; ++k) w[k] -= 0.5 * gw[k] / static_cast<double>(d.train.size());
    bias -= 0.5 * gb / static_cast<double>(d.train.size());
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto x = counts(d.test, i);
    double z = bias;
    for (std::size_t k = 0; k < V; ++k) z += w[k] * x[k];
    correct += (z > 0) == (d.test.labels[i] == 1);
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(d.test.size()), 0.99);
}

// ---------------------------------------------------------------------------
// TSV corpora

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("Great movie!! Loved it."), (TokenList{"great", "movie", "loved", "it"}));
  EXPECT_EQ(tokenize("  don't\tstop  "), (TokenList{"dont", "stop"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("?! ...").empty());
}

TEST(Tsv, LoadsLinesWithCrlfAndEmptyText) {
  test::TempDir dir("tsv");
  write_file(dir / "c.tsv", "1\tGood film\r\n0\t\r\n1\tgood, GOOD\n");
  const auto c = load_tsv_corpus(dir / "c.tsv", 2);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].label, 1);
  EXPECT_EQ(c[0].tokens, (TokenList{"good", "film"}));
  EXPECT_TRUE(c[1].tokens.empty());
  EXPECT_EQ(c[2].tokens, (TokenList{"good", "good"}));
}

TEST(Tsv, ErrorsCarryLineNumbers) {
  test::TempDir dir("tsv");
  write_file(dir / "a.tsv", "1\tok\nno tab here\n");
  EXPECT_NE(error_of([&] { load_tsv_corpus(dir / "a.tsv", 2); }).find("a.tsv:2: malformed"), std::string::npos);
  write_file(dir / "b.tsv", "1\tok\n0\tok\n2\tbad\n");
  EXPECT_NE(error_of([&] { load_tsv_corpus(dir / "b.tsv", 2); }).find("b.tsv:3: unknown label"), std::string::npos);
  write_file(dir / "c.tsv", "x\tbad\n");
  EXPECT_THROW(load_tsv_corpus(dir / "c.tsv", 2), std::runtime_error);
  EXPECT_THROW(load_tsv_corpus(dir / "missing.tsv", 2), std::runtime_error);
}

TEST(Tsv, EncodeCorpusSplitsAndPads) {
  std::vector<LabeledText> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back({i % 2, {"w" + std::to_string(i), "common"}});
  Rng rng(11);
  Vocabulary vocab;
  const Dataset d = encode_corpus(corpus, 100, 4, 2, rng, &vocab);
  EXPECT_EQ(d.train.size(), 8u);
  EXPECT_EQ(d.test.size(), 2u);
  EXPECT_EQ(d.vocab_size, vocab.size());
  EXPECT_EQ(vocab.index_of("common"), 2);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto row = d.train.row(i);
    EXPECT_EQ(row[0], kPadToken);
    EXPECT_EQ(row[1], kPadToken);
    EXPECT_EQ(row[3], 2);
  }
  // Test words never reach the vocabulary.
  for (std::size_t i = 0; i < d.test.size(); ++i) EXPECT_EQ(d.test.row(i)[2], kOovToken);
  EXPECT_THROW(encode_corpus({corpus[0]}, 100, 4, 2, rng), std::invalid_argument);
}

}  // namespace
}  // namespace slim
