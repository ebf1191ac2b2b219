#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "support.hpp"
#include "toter/silver.hpp"

using namespace toter;
using toter::testing::TempDir;

namespace {

TopicTaxonomy tree(std::vector<ClassRecord> recs) {
  for (auto& r : recs)
    if (r.phrases.empty()) r.phrases.push_back(r.name);
  return TopicTaxonomy::from_records(std::move(recs));
}

std::vector<float> gaussian(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

struct Instance {
  TopicTaxonomy tax;
  Corpus corpus;
  EmbeddingStore store;
};

/// Random documents over the taxonomy vocabulary with random embeddings for
/// every document and every phrase.
Instance random_instance(std::uint64_t seed, std::size_t n_docs, int depth, std::size_t fanout) {
  Rng rng(seed);
  Instance inst;
  inst.tax = toter::testing::random_layered_tree(rng, depth, fanout);
  std::vector<std::string> vocab;
  for (const auto& c : inst.tax.classes())
    for (const auto& p : c.phrases) vocab.push_back(p);
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  const std::size_t dim = 8;
  for (const auto& p : vocab) inst.store.add(Namespace::phrase, p, gaussian(rng, dim));
  std::vector<Document> docs;
  for (std::size_t d = 0; d < n_docs; ++d) {
    Document doc;
    doc.id = "d" + std::to_string(d);
    const auto mentions = 1 + rng.below(6);
    for (std::size_t k = 0; k < mentions; ++k) doc.phrase_counts[vocab[rng.below(vocab.size())]] += 1;
    docs.push_back(doc);
    inst.store.add(Namespace::doc, doc.id, gaussian(rng, dim));
  }
  inst.corpus = make_corpus(std::move(docs));
  return inst;
}

long double ensemble_oracle(long double rl, long double rs, long double rho) {
  return std::pow(0.5L * std::pow(1.0L / rl, rho) + 0.5L * std::pow(1.0L / rs, rho), 1.0L / rho);
}

/// 1-based descending rank with earlier position winning ties.
std::size_t rank_of(const std::vector<double>& s, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] > s[i] || (s[k] == s[i] && k < i)) ++r;
  }
  return r;
}

}  // namespace

TEST(SimLexical, NoSubtreePhraseInDocumentIsZero) {
  Document d{"d", {{"q", 4}}, 4};
  CorpusStats s;
  s.n_docs = 2;
  s.doc_frequency["q"] = 1;
  EXPECT_EQ(sim_lexical(d, {"a", "b"}, s), 0.0);
}

TEST(SimLexical, SinglePhraseWithUnitIdf) {
  Document d{"d", {{"p", 3}}, 3};
  CorpusStats s;
  s.n_docs = 5;
  s.doc_frequency["p"] = 5;
  EXPECT_DOUBLE_EQ(sim_lexical(d, {"p"}, s), 3.0);
}

TEST(SimLexical, MatchesMeanOfPerPhraseWeights) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Document d{"d", {}, 1};
    CorpusStats s;
    s.n_docs = 10 + rng.below(90);
    std::vector<std::string> phrases;
    for (int k = 0; k < 5; ++k) {
      const std::string p = "p" + std::to_string(k);
      phrases.push_back(p);
      if (rng.uniform() < 0.6) d.phrase_counts[p] = static_cast<std::uint32_t>(1 + rng.below(5));
      s.doc_frequency[p] = 1 + rng.below(s.n_docs);
    }
    long double sum = 0;
    for (const auto& p : phrases) {
      const long double tf = d.count(p);
      const long double w = std::log((s.n_docs + 1.0L) / (s.df(p) + 1.0L)) + 1.0L;
      sum += tf * w;
    }
    EXPECT_NEAR(sim_lexical(d, phrases, s), static_cast<double>(sum / 5.0L), 1e-12);
  }
}

TEST(SimSemantic, IdenticalVectorIsOne) {
  EmbeddingStore store;
  const std::vector<float> h{0.6f, 0.8f};
  store.add(Namespace::phrase, "p", h);
  EXPECT_NEAR(sim_semantic(h, {"p"}, store, "c"), 1.0, 1e-12);
}

TEST(SimSemantic, MeanOfTwoCosines) {
  EmbeddingStore store;
  const std::vector<float> a{1, 0}, b{0, 1};
  store.add(Namespace::phrase, "a", a);
  store.add(Namespace::phrase, "b", b);
  std::size_t covered = 0;
  EXPECT_NEAR(sim_semantic(a, {"a", "b", "missing"}, store, "c", &covered), 0.5, 1e-15);
  EXPECT_EQ(covered, 2u);
}

TEST(PhraseCoverage, CountsDistinctPhrasesOnce) {
  const auto tax = tree({{"r", "a", {}, {"a", "b"}}, {"x", "c", {"r"}, {"a", "c", "d"}}});
  EmbeddingStore store;
  const std::vector<float> v{1, 0};
  store.add(Namespace::phrase, "a", v);
  store.add(Namespace::phrase, "d", v);
  store.add(Namespace::phrase, "unused", v);
  EXPECT_DOUBLE_EQ(phrase_coverage(tax, store), 0.5);
}

TEST(SimSemantic, NoEmbeddedPhraseIsAnErrorForTheClass) {
  EmbeddingStore store;
  const std::vector<float> a{1, 0};
  store.add(Namespace::doc, "d", a);
  try {
    sim_semantic(a, {"x", "y"}, store, "klass");
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("klass"), std::string::npos);
  }
}

TEST(SimSemantic, MatchesBruteForceMean) {
  Rng rng(17);
  EmbeddingStore store;
  std::vector<std::string> phrases;
  for (int k = 0; k < 12; ++k) {
    phrases.push_back("p" + std::to_string(k));
    store.add(Namespace::phrase, phrases.back(), gaussian(rng, 6));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const auto h = gaussian(rng, 6);
    std::vector<std::string> subset;
    for (const auto& p : phrases)
      if (rng.uniform() < 0.5) subset.push_back(p);
    if (subset.empty()) subset.push_back(phrases[0]);
    long double sum = 0;
    for (const auto& p : subset) {
      const auto v = *store.find(Namespace::phrase, p);
      long double dot = 0, nu = 0, nv = 0;
      for (int i = 0; i < 6; ++i) {
        dot += static_cast<long double>(h[i]) * v[i];
        nu += static_cast<long double>(h[i]) * h[i];
        nv += static_cast<long double>(v[i]) * v[i];
      }
      sum += dot / std::sqrt(nu * nv);
    }
    EXPECT_NEAR(sim_semantic(h, subset, store, "c"), static_cast<double>(sum / subset.size()), 1e-12);
  }
}

TEST(SimEnsemble, BothTopRankedIsOneForAnyRho) {
  for (double rho : {0.01, 0.1, 0.5, 1.0}) EXPECT_NEAR(sim_ensemble(1, 1, rho), 1.0, 1e-15);
}

TEST(SimEnsemble, SymmetricInItsRanks) {
  for (std::size_t a = 1; a < 8; ++a)
    for (std::size_t b = 1; b < 8; ++b) EXPECT_EQ(sim_ensemble(a, b), sim_ensemble(b, a));
}

TEST(SimEnsemble, RanksOneAndTwo) {
  EXPECT_NEAR(sim_ensemble(1, 2, 0.1), static_cast<double>(ensemble_oracle(1, 2, 0.1L)), 1e-12);
  EXPECT_NEAR(sim_ensemble(1, 2, 0.1), 0.7113, 1e-4);
}

TEST(SimEnsemble, RejectsBadInputs) {
  EXPECT_THROW(sim_ensemble(0, 1), InputError);
  EXPECT_THROW(sim_ensemble(1, 1, 0.0), InputError);
  EXPECT_THROW(sim_ensemble(1, 1, 1.5), InputError);
}

TEST(AssignPath, LinearChainIsForced) {
  auto tax = tree({{"root", "root", {}, {"r"}}, {"a", "a", {"root"}, {"pa"}}, {"b", "b", {"a"}, {"pb"}}});
  EmbeddingStore store;
  const std::vector<float> h{1, 0};
  store.add(Namespace::doc, "d", h);
  CorpusStats s;
  s.n_docs = 1;
  const auto ap = assign_path(Document{"d", {}, 1}, tax, s, store);
  ASSERT_EQ(ap.path.size(), 3u);
  EXPECT_EQ(tax.at(ap.path[0]).id, "root");
  EXPECT_EQ(tax.at(ap.path[1]).id, "a");
  EXPECT_EQ(tax.at(ap.path[2]).id, "b");
}

TEST(AssignPath, DocumentInsideOneSubtreeFollowsIt) {
  auto tax = tree({{"r", "r", {}, {}},
                   {"x", "x", {"r"}, {"x1", "x2"}},
                   {"y", "y", {"r"}, {"y1", "y2"}},
                   {"xa", "xa", {"x"}, {"xa1"}},
                   {"xb", "xb", {"x"}, {"xb1"}}});
  EmbeddingStore store;
  Rng rng(3);
  for (const auto& c : tax.classes())
    for (const auto& p : c.phrases) store.add(Namespace::phrase, p, gaussian(rng, 16));
  // The document mentions only X-subtree phrases and sits at their centroid.
  const auto x_phrases = subtree_phrases(tax, "x");
  std::vector<float> centroid(16, 0.0f);
  for (const auto& p : x_phrases) {
    const auto v = *store.find(Namespace::phrase, p);
    for (int i = 0; i < 16; ++i) centroid[i] += v[i] / static_cast<float>(x_phrases.size());
  }
  store.add(Namespace::doc, "d", centroid);
  Document d{"d", {{"x1", 2}, {"xa1", 1}}, 3};
  auto corpus = make_corpus({d, Document{"other", {{"y1", 1}}, 1}});
  store.add(Namespace::doc, "other", gaussian(rng, 16));

  const auto ap = assign_path(corpus.docs[0], tax, corpus.stats, store);
  // Brute-force argmax of the ensemble at every level of the path.
  for (std::size_t step = 0; step + 1 < ap.path.size(); ++step) {
    const auto& kids = tax.at(ap.path[step]).children;
    if (kids.size() < 2) continue;
    std::vector<double> lex, sem;
    for (auto c : kids) {
      lex.push_back(sim_lexical(corpus.docs[0], c, tax, corpus.stats));
      sem.push_back(sim_semantic(corpus.docs[0], c, tax, store));
    }
    std::size_t best = 0;
    long double best_s = -1;
    for (std::size_t i = 0; i < kids.size(); ++i) {
      const auto s = ensemble_oracle(rank_of(lex, i), rank_of(sem, i), 0.1L);
      if (s > best_s + 1e-15L) {
        best = i;
        best_s = s;
      }
    }
    EXPECT_EQ(ap.path[step + 1], kids[best]);
  }
  EXPECT_EQ(tax.at(ap.path[1]).id, "x");
}

TEST(AssignPath, IdenticalChildrenGoToSmallerId) {
  auto tax = tree({{"r", "r", {}, {}}, {"b", "b", {"r"}, {"p"}}, {"a", "a", {"r"}, {"p"}}});
  EmbeddingStore store;
  const std::vector<float> v{1, 1};
  store.add(Namespace::phrase, "p", v);
  store.add(Namespace::phrase, "a", v);
  store.add(Namespace::phrase, "b", v);
  store.add(Namespace::doc, "d", v);
  auto corpus = make_corpus({Document{"d", {{"p", 1}}, 1}});
  const auto ap = assign_path(corpus.docs[0], tax, corpus.stats, store);
  EXPECT_EQ(tax.at(ap.path[1]).id, "a");
}

TEST(MedianFilter, KeepsTheUpperHalfOfAClass) {
  auto tax = tree({{"r", "r", {}, {}}, {"a", "a", {"r"}, {}}, {"b", "b", {"a"}, {}}, {"c", "c", {"b"}, {}}});
  const auto r = tax.index_of("r"), a = tax.index_of("a"), b = tax.index_of("b"), c = tax.index_of("c");
  std::vector<AssignmentPath> paths;
  for (double s : {0.1, 0.2, 0.3, 0.4}) paths.push_back({"d" + std::to_string(paths.size()), {r, a, b, c}, {1.0, s, 1.0}});
  const auto pos = median_filter(paths, tax);
  EXPECT_EQ(pos[0], (std::vector<std::size_t>{r, a}));
  EXPECT_EQ(pos[1], (std::vector<std::size_t>{r, a}));
  EXPECT_EQ(pos[2], (std::vector<std::size_t>{r, a, b, c}));
  EXPECT_EQ(pos[3], (std::vector<std::size_t>{r, a, b, c}));
}

TEST(MedianFilter, SingleDocumentClassIsRetained) {
  auto tax = tree({{"r", "r", {}, {}}, {"a", "a", {"r"}, {}}, {"b", "b", {"a"}, {}}, {"b2", "b2", {"a"}, {}}});
  const auto r = tax.index_of("r"), a = tax.index_of("a"), b = tax.index_of("b"), b2 = tax.index_of("b2");
  std::vector<AssignmentPath> paths{{"d0", {r, a, b}, {1.0, 0.37}}, {"d1", {r, a, b2}, {1.0, 0.9}},
                                    {"d2", {r, a, b2}, {1.0, 0.1}}};
  const auto pos = median_filter(paths, tax);
  EXPECT_EQ(pos[0], (std::vector<std::size_t>{r, a, b}));
  EXPECT_EQ(pos[1], (std::vector<std::size_t>{r, a, b2}));
  EXPECT_EQ(pos[2], (std::vector<std::size_t>{r, a}));
}

TEST(MedianFilter, LevelOneIsNeverFiltered) {
  auto tax = tree({{"r", "r", {}, {}}, {"a", "a", {"r"}, {}}, {"b", "b", {"r"}, {}}});
  const auto r = tax.index_of("r"), a = tax.index_of("a");
  std::vector<AssignmentPath> paths{{"d0", {r, a}, {0.1}}, {"d1", {r, a}, {0.9}}};
  const auto pos = median_filter(paths, tax);
  EXPECT_EQ(pos[0].size(), 2u);
  EXPECT_EQ(pos[1].size(), 2u);
}

TEST(GenerateSilverLabels, PositivesAreRootPrefixesOfValidPaths) {
  auto inst = random_instance(30, 30, 3, 3);
  const auto labels = generate_silver_labels(inst.corpus, inst.tax, inst.corpus.stats, inst.store, kDefaultRho, 4);
  const auto& tax = inst.tax;
  ASSERT_EQ(labels.paths.size(), 30u);

  // Independent median per class, recomputed from the paths.
  std::map<std::size_t, std::vector<double>> by_class;
  for (const auto& ap : labels.paths)
    for (std::size_t i = 1; i < ap.path.size(); ++i) by_class[ap.path[i]].push_back(ap.node_similarity[i - 1]);
  auto median = [&](std::size_t j) {
    auto v = by_class[j];
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  for (std::size_t d = 0; d < labels.paths.size(); ++d) {
    const auto& ap = labels.paths[d];
    EXPECT_EQ(ap.doc, inst.corpus.docs[d].id);
    ASSERT_EQ(ap.path.front(), tax.root());
    EXPECT_TRUE(tax.is_leaf(ap.path.back()));
    for (std::size_t i = 1; i < ap.path.size(); ++i) EXPECT_EQ(tax.at(ap.path[i]).parent, ap.path[i - 1]);

    const auto& pos = labels.positives[d];
    ASSERT_LE(pos.size(), ap.path.size());
    ASSERT_GE(pos.size(), std::min<std::size_t>(2, ap.path.size()));
    EXPECT_TRUE(std::equal(pos.begin(), pos.end(), ap.path.begin()));

    std::size_t expected = 1;
    while (expected < ap.path.size()) {
      const auto j = ap.path[expected];
      if (tax.at(j).level >= 2 && ap.node_similarity[expected - 1] < median(j)) break;
      ++expected;
    }
    EXPECT_EQ(pos.size(), expected) << ap.doc;

    const auto y = labels.dense(d);
    EXPECT_EQ(static_cast<std::size_t>(std::count(y.begin(), y.end(), 1.0)), pos.size());
  }
}

TEST(GenerateSilverLabels, WorkerCountDoesNotChangeTheResult) {
  auto inst = random_instance(8, 60, 3, 4);
  const auto one = generate_silver_labels(inst.corpus, inst.tax, inst.corpus.stats, inst.store, kDefaultRho, 1);
  const auto many = generate_silver_labels(inst.corpus, inst.tax, inst.corpus.stats, inst.store, kDefaultRho, 7);
  EXPECT_EQ(one.positives, many.positives);
  for (std::size_t d = 0; d < one.paths.size(); ++d) {
    EXPECT_EQ(one.paths[d].path, many.paths[d].path);
    EXPECT_EQ(one.paths[d].node_similarity, many.paths[d].node_similarity);
  }
}

TEST(SilverPersistence, RoundTripAndRealignment) {
  auto inst = random_instance(11, 25, 2, 3);
  const auto labels = generate_silver_labels(inst.corpus, inst.tax, inst.corpus.stats, inst.store);
  TempDir dir;
  save_silver_labels(labels, inst.tax, dir.file("silver.jsonl"));
  const auto back = load_silver_labels(dir.file("silver.jsonl"), inst.tax);
  EXPECT_EQ(back.doc_ids, labels.doc_ids);
  EXPECT_EQ(back.positives, labels.positives);
  EXPECT_TRUE(back.paths.empty());

  SilverLabels reversed = back;
  std::reverse(reversed.doc_ids.begin(), reversed.doc_ids.end());
  std::reverse(reversed.positives.begin(), reversed.positives.end());
  const auto aligned = align_to_corpus(reversed, inst.corpus);
  EXPECT_EQ(aligned.positives, labels.positives);

  SilverLabels missing = back;
  missing.doc_ids.pop_back();
  missing.positives.pop_back();
  EXPECT_THROW(align_to_corpus(missing, inst.corpus), InputError);
}

TEST(SilverPersistence, UnknownClassReportsTheLine) {
  auto tax = tree({{"r", "r", {}, {}}, {"a", "a", {"r"}, {}}});
  std::istringstream in("{\"doc_id\":\"d\",\"positive_class_ids\":[\"r\"]}\n{\"doc_id\":\"e\",\"positive_class_ids\":[\"zz\"]}\n");
  try {
    parse_silver_labels(in, tax, "s.jsonl");
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("s.jsonl:2"), std::string::npos) << e.what();
  }
}
