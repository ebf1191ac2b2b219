#include <gtest/gtest.h>

#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "support.hpp"
#include "toter/taxonomy.hpp"

using namespace toter;
using toter::testing::TempDir;

namespace {

TopicTaxonomy parse(const std::string& text) {
  std::istringstream in(text);
  return parse_taxonomy(in, "inline");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

TopicTaxonomy path_graph(std::size_t n) {
  std::vector<ClassRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    ClassRecord r{std::string(1, static_cast<char>('a' + i)), "", {}, {}};
    r.name = "phrase " + r.id;
    r.phrases = {r.name};
    if (i > 0) r.parents.push_back(std::string(1, static_cast<char>('a' + i - 1)));
    recs.push_back(r);
  }
  return TopicTaxonomy::from_records(recs);
}

std::set<std::string> dfs_union(const TopicTaxonomy& tax, std::size_t j) {
  std::set<std::string> out;
  std::vector<std::size_t> stack{j};
  while (!stack.empty()) {
    auto u = stack.back();
    stack.pop_back();
    for (const auto& p : tax.at(u).phrases) out.insert(p);
    for (auto c : tax.at(u).children) stack.push_back(c);
  }
  return out;
}

// Distances by plain BFS over an explicit undirected adjacency list.
std::map<std::size_t, int> bfs_ball(const TopicTaxonomy& tax, std::size_t j, int hops) {
  std::vector<std::vector<std::size_t>> adj(tax.size());
  for (std::size_t i = 0; i < tax.size(); ++i) {
    if (tax.at(i).parent != kNoParent) {
      adj[i].push_back(tax.at(i).parent);
      adj[tax.at(i).parent].push_back(i);
    }
  }
  std::map<std::size_t, int> dist{{j, 0}};
  std::deque<std::size_t> q{j};
  while (!q.empty()) {
    auto u = q.front();
    q.pop_front();
    for (auto v : adj[u]) {
      if (!dist.count(v) && dist[u] < hops) {
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace

TEST(TaxonomyLoad, MinimalTree) {
  auto tax = parse(R"({"id":"r","name":"root","parent":null,"phrases":["root"]}
{"id":"a","name":"alpha","parent":"r","phrases":["alpha","first"]}
{"id":"b","name":"beta","parent":"r","phrases":["beta"]}
)");
  EXPECT_EQ(tax.size(), 3u);
  EXPECT_EQ(tax.depth(), 1);
  EXPECT_EQ(tax.edge_count(), 2u);
  EXPECT_EQ(tax.at(tax.root()).id, "r");
  EXPECT_EQ(tax.level_members(1).size(), 2u);
}

TEST(TaxonomyLoad, MissingParentNamesTheClass) {
  const auto msg = error_of(R"({"id":"r","name":"root","parent":null,"phrases":["root"]}
{"id":"X","name":"x","parent":"ghost","phrases":["x"]}
)");
  EXPECT_NE(msg.find("'X'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("ghost"), std::string::npos) << msg;
}

TEST(TaxonomyLoad, MultipleParentsRejectedAsNonTree) {
  const auto msg = error_of(R"({"id":"r","name":"root","parent":null,"phrases":["root"]}
{"id":"a","name":"a","parent":"r","phrases":["a"]}
{"id":"b","name":"b","parent":"r","phrases":["b"]}
{"id":"c","name":"c","parent":["a","b"],"phrases":["c"]}
)");
  EXPECT_NE(msg.find("non-tree edge set"), std::string::npos) << msg;
}

TEST(TaxonomyLoad, RejectsCycleDuplicateAndEmptyPhrases) {
  EXPECT_NE(error_of(R"({"id":"r","name":"root","parent":null,"phrases":["root"]}
{"id":"a","name":"a","parent":"b","phrases":["a"]}
{"id":"b","name":"b","parent":"a","phrases":["b"]}
)").find("cycle"), std::string::npos);
  EXPECT_NE(error_of(R"({"id":"r","name":"root","parent":null,"phrases":["root"]}
{"id":"r","name":"again","parent":null,"phrases":["again"]}
)").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of(R"({"id":"r","name":"root","parent":null,"phrases":[]}
)").find("empty"), std::string::npos);
  EXPECT_NE(error_of(R"({"id":"r","name":"root","parent":null,"phrases":["root"]}
{"id":"s","name":"s","parent":null,"phrases":["s"]}
)").find("multiple roots"), std::string::npos);
}

TEST(TaxonomyLoad, NameIsAlwaysAPhrase) {
  auto tax = parse(R"({"id":"r","name":"root","parent":null,"phrases":["other"]}
)");
  const auto& ph = tax.at(0).phrases;
  EXPECT_NE(std::find(ph.begin(), ph.end(), "root"), ph.end());
}

TEST(TaxonomyLoad, SaveLoadRoundTrip) {
  Rng rng(3);
  auto tax = toter::testing::random_tree(rng, 25);
  TempDir dir;
  save_taxonomy(tax, dir.file("t.jsonl"));
  auto back = load_taxonomy(dir.file("t.jsonl"));
  ASSERT_EQ(back.size(), tax.size());
  for (std::size_t i = 0; i < tax.size(); ++i) {
    EXPECT_EQ(back.at(i).id, tax.at(i).id);
    EXPECT_EQ(back.at(i).parent, tax.at(i).parent);
    EXPECT_EQ(back.at(i).phrases, tax.at(i).phrases);
  }
}

TEST(TaxonomyLoad, UnreadableFileIsAnInputError) {
  EXPECT_THROW(load_taxonomy("/nonexistent/taxonomy.jsonl"), InputError);
}

TEST(SubtreePhrases, LeafIsItsOwnPhrases) {
  auto tax = TopicTaxonomy::from_records({{"r", "r", {}, {"r"}}, {"j", "a", {"r"}, {"a", "b"}}});
  EXPECT_EQ(subtree_phrases(tax, "j"), (std::vector<std::string>{"a", "b"}));
}

TEST(SubtreePhrases, UnionDeduplicates) {
  auto tax = TopicTaxonomy::from_records({{"j", "a", {}, {"a"}}, {"k", "a", {"j"}, {"a", "c"}}});
  const auto u = subtree_phrases(tax, "j");
  EXPECT_EQ(u, (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(u.size(), 2u);
}

TEST(SubtreePhrases, DisjointSetsAddUp) {
  auto tax = TopicTaxonomy::from_records({{"r", "r1", {}, {"r1", "r2"}},
                                          {"x", "x1", {"r"}, {"x1", "x2", "x3"}},
                                          {"y", "y1", {"r"}, {"y1", "y2", "y3", "y4"}}});
  EXPECT_EQ(subtree_phrases(tax, "r").size(), 9u);
}

TEST(SubtreePhrases, MatchesBruteForceUnionOnRandomTrees) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    auto tax = toter::testing::random_tree(rng, 2 + rng.below(40));
    const auto table = subtree_phrase_table(tax);
    for (std::size_t j = 0; j < tax.size(); ++j) {
      const auto oracle = dfs_union(tax, j);
      const auto got = subtree_phrases(tax, j);
      EXPECT_EQ(std::set<std::string>(got.begin(), got.end()), oracle);
      EXPECT_EQ(got.size(), oracle.size());
      EXPECT_EQ(table[j], got);
    }
  }
}

TEST(EgoGraph, ZeroHopsIsTheCenter) {
  auto tax = path_graph(4);
  auto g = ego_graph(tax, "b", 0);
  EXPECT_EQ(g.nodes, (std::vector<std::size_t>{tax.index_of("b")}));
  EXPECT_TRUE(g.edges.empty());
}

TEST(EgoGraph, StarAtOneHop) {
  std::vector<ClassRecord> recs{{"r", "r", {}, {"r"}}};
  for (int i = 0; i < 5; ++i) recs.push_back({"c" + std::to_string(i), "c", {"r"}, {"c"}});
  auto tax = TopicTaxonomy::from_records(recs);
  auto g = ego_graph(tax, "r", 1);
  EXPECT_EQ(g.nodes.size(), 6u);
  EXPECT_EQ(g.edges.size(), 5u);
}

TEST(EgoGraph, PathMiddleTwoHops) {
  auto tax = path_graph(5);
  auto g = ego_graph(tax, "c", 2);
  EXPECT_EQ(g.nodes.size(), 5u);
  EXPECT_EQ(g.nodes.size(), bfs_ball(tax, tax.index_of("c"), 2).size());
}

TEST(EgoGraph, MatchesBruteForceBfs) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    auto tax = toter::testing::random_tree(rng, 1 + rng.below(30));
    const auto j = rng.below(tax.size());
    const int hops = static_cast<int>(rng.below(4));
    const auto oracle = bfs_ball(tax, j, hops);
    const auto g = ego_graph(tax, j, hops);
    ASSERT_EQ(g.nodes.size(), oracle.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) EXPECT_EQ(g.distance[i], oracle.at(g.nodes[i]));
    EXPECT_EQ(g.edges.size(), g.nodes.size() - 1);  // a connected ball of a tree is a tree
  }
}

TEST(Prune, ZeroRatioIsIdentity) {
  Rng rng(2);
  auto tax = toter::testing::random_tree(rng, 20);
  auto res = prune_random(tax, 0.0, 9);
  EXPECT_TRUE(res.removed.empty());
  ASSERT_EQ(res.taxonomy.size(), tax.size());
  for (std::size_t i = 0; i < tax.size(); ++i) EXPECT_EQ(res.taxonomy.at(i).id, tax.at(i).id);
}

TEST(Prune, PickedSubtreeOfFourMeetsTargetExactly) {
  // r -> A -> {a1, a2, a3}; r -> {b1..b5}: 10 classes, A's subtree has 4.
  std::vector<ClassRecord> recs{{"r", "r", {}, {"r"}}, {"A", "A", {"r"}, {"A"}}};
  for (int i = 1; i <= 3; ++i) recs.push_back({"a" + std::to_string(i), "a", {"A"}, {"a"}});
  for (int i = 1; i <= 5; ++i) recs.push_back({"b" + std::to_string(i), "b", {"r"}, {"b"}});
  auto tax = TopicTaxonomy::from_records(recs);
  ASSERT_EQ(tax.size(), 10u);

  // The first pick is uniform over non-root classes in index order; find a
  // seed whose first draw lands on A.
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < tax.size(); ++i)
    if (i != tax.root()) alive.push_back(i);
  std::uint64_t seed = 0;
  while (alive[Rng(seed).below(alive.size())] != tax.index_of("A")) ++seed;

  auto res = prune_random(tax, 0.4, seed);
  EXPECT_EQ(res.removed, (std::vector<std::string>{"A", "a1", "a2", "a3"}));
  EXPECT_EQ(res.taxonomy.size(), 6u);
  EXPECT_DOUBLE_EQ(res.achieved_ratio, 0.4);
}

TEST(Prune, RandomTreeStaysValidWithBoundedOvershoot) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto tax = toter::testing::random_tree(rng, 100);
    std::size_t max_subtree = 0;
    for (std::size_t j = 0; j < tax.size(); ++j)
      if (j != tax.root()) max_subtree = std::max(max_subtree, subtree_members(tax, j).size());
    auto res = prune_random(tax, 0.3, static_cast<std::uint64_t>(trial));
    EXPECT_GE(res.removed.size(), 30u);
    EXPECT_LE(res.removed.size(), 30u + max_subtree - 1);
    EXPECT_TRUE(toter::testing::is_valid_tree(res.taxonomy));
    EXPECT_EQ(res.taxonomy.size() + res.removed.size(), tax.size());
    // Removal is closed under descendants.
    std::set<std::string> gone(res.removed.begin(), res.removed.end());
    for (const auto& id : res.removed)
      for (auto u : subtree_members(tax, tax.index_of(id))) EXPECT_TRUE(gone.count(tax.at(u).id));
  }
}

TEST(Prune, RejectsRatioOutsideRange) {
  Rng rng(1);
  auto tax = toter::testing::random_tree(rng, 5);
  EXPECT_THROW(prune_random(tax, 1.0, 0), InputError);
  EXPECT_THROW(prune_random(tax, -0.1, 0), InputError);
}

TEST(Shuffle, ZeroRatioIsIdentity) {
  Rng rng(4);
  auto tax = toter::testing::random_layered_tree(rng, 3, 3);
  auto res = shuffle_level(tax, 0.0, 1, 2);
  EXPECT_TRUE(res.swapped.empty());
  for (std::size_t i = 0; i < tax.size(); ++i) EXPECT_EQ(res.taxonomy.at(i).parent, tax.at(i).parent);
}

TEST(Shuffle, SiblingSwapKeepsStructure) {
  auto tax = TopicTaxonomy::from_records({{"r", "r", {}, {"r"}}, {"a", "a", {"r"}, {"a"}}, {"b", "b", {"r"}, {"b"}}});
  auto res = shuffle_level(tax, 1.0, 3, 1);
  ASSERT_EQ(res.swapped.size(), 1u);
  for (std::size_t i = 0; i < tax.size(); ++i) EXPECT_EQ(res.taxonomy.at(i).parent, tax.at(i).parent);
}

TEST(Shuffle, CrossParentSwapPreservesLevelMultisets) {
  // r -> {p, q}; p -> {p1, p2}; q -> {q1, q2}
  auto tax = TopicTaxonomy::from_records({{"r", "r", {}, {"r"}},
                                          {"p", "p", {"r"}, {"p"}},
                                          {"q", "q", {"r"}, {"q"}},
                                          {"p1", "p1", {"p"}, {"p1"}},
                                          {"p2", "p2", {"p"}, {"p2"}},
                                          {"q1", "q1", {"q"}, {"q1"}},
                                          {"q2", "q2", {"q"}, {"q2"}}});
  bool saw_cross = false;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto res = shuffle_level(tax, 0.5, seed, 2);
    ASSERT_EQ(res.swapped.size(), 1u);
    ASSERT_TRUE(toter::testing::is_valid_tree(res.taxonomy));
    std::multiset<std::string> before, after;
    std::multiset<std::pair<std::string, std::string>> edges_before, edges_after;
    for (int level = 0; level <= 2; ++level) {
      for (auto j : tax.level_members(level)) before.insert(std::to_string(level) + tax.at(j).id);
      for (auto j : res.taxonomy.level_members(level)) after.insert(std::to_string(level) + res.taxonomy.at(j).id);
    }
    EXPECT_EQ(before, after);
    for (std::size_t i = 0; i < tax.size(); ++i) {
      if (tax.at(i).parent != kNoParent) edges_before.insert({tax.at(tax.at(i).parent).id, tax.at(i).id});
      const auto& t2 = res.taxonomy;
      if (t2.at(i).parent != kNoParent) edges_after.insert({t2.at(t2.at(i).parent).id, t2.at(i).id});
    }
    const auto [a, b] = res.swapped.front();
    const bool cross = tax.at(tax.index_of(a)).parent != tax.at(tax.index_of(b)).parent;
    if (cross) {
      saw_cross = true;
      EXPECT_NE(edges_before, edges_after);
    } else {
      EXPECT_EQ(edges_before, edges_after);
    }
  }
  EXPECT_TRUE(saw_cross);
}

TEST(Shuffle, RejectsLevelsOutsideTheTree) {
  Rng rng(4);
  auto tax = toter::testing::random_layered_tree(rng, 2, 2);
  EXPECT_THROW(shuffle_level(tax, 0.1, 1, 0), InputError);
  EXPECT_THROW(shuffle_level(tax, 0.1, 1, 3), InputError);
}
