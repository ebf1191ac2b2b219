#pragma once

// Taxonomy-guided silver labels: top-down assignment of every document to a
// root-to-leaf path using a rank ensemble of lexical and semantic child
// similarity, followed by per-class median filtering below level 1.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "toter/corpus.hpp"
#include "toter/taxonomy.hpp"

namespace toter {

inline constexpr double kDefaultRho = 0.1;

/// Mean tf-idf weight of the document over the class's subtree phrases.
inline double sim_lexical(const Document& doc, const std::vector<std::string>& subtree_phrases,
                          const CorpusStats& stats) {
  if (subtree_phrases.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : subtree_phrases) sum += term_weight(stats, doc, p);
  return sum / static_cast<double>(subtree_phrases.size());
}

inline double sim_lexical(const Document& doc, std::size_t j, const TopicTaxonomy& tax, const CorpusStats& stats) {
  return sim_lexical(doc, subtree_phrases(tax, j), stats);
}

/// Mean cosine between the document vector and each subtree phrase vector.
/// Phrases without an embedding are skipped; `covered` reports how many were used.
inline double sim_semantic(std::span<const float> doc_vec, const std::vector<std::string>& subtree_phrases,
                           const EmbeddingStore& store, const std::string& class_id,
                           std::size_t* covered = nullptr) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : subtree_phrases) {
    auto hp = store.find(Namespace::phrase, p);
    if (!hp) continue;
    sum += cosine(*hp, doc_vec);
    ++n;
  }
  if (covered) *covered = n;
  if (n == 0) throw InputError("sim_semantic: no phrase of class '" + class_id + "' has an embedding");
  return sum / static_cast<double>(n);
}

/// Share of distinct taxonomy phrases that have a phrase embedding.
inline double phrase_coverage(const TopicTaxonomy& tax, const EmbeddingStore& store) {
  std::vector<std::string> phrases;
  for (const auto& c : tax.classes()) phrases.insert(phrases.end(), c.phrases.begin(), c.phrases.end());
  std::sort(phrases.begin(), phrases.end());
  phrases.erase(std::unique(phrases.begin(), phrases.end()), phrases.end());
  if (phrases.empty()) return 1.0;
  const auto hit = std::count_if(phrases.begin(), phrases.end(),
                                 [&](const std::string& p) { return store.find(Namespace::phrase, p).has_value(); });
  return static_cast<double>(hit) / static_cast<double>(phrases.size());
}

inline double sim_semantic(const Document& doc, std::size_t j, const TopicTaxonomy& tax,
                           const EmbeddingStore& store) {
  return sim_semantic(store.get(Namespace::doc, doc.id), subtree_phrases(tax, j), store, tax.at(j).id);
}

/// Reciprocal-rank ensemble ((1/2) rL^-rho + (1/2) rS^-rho)^(1/rho); ranks are 1-based.
inline double sim_ensemble(std::size_t rank_lexical, std::size_t rank_semantic, double rho = kDefaultRho) {
  if (rank_lexical < 1 || rank_semantic < 1) throw InputError("sim_ensemble: ranks are 1-based");
  if (!(rho > 0.0 && rho <= 1.0)) throw InputError("sim_ensemble: rho must lie in (0, 1]");
  const double a = std::pow(1.0 / static_cast<double>(rank_lexical), rho);
  const double b = std::pow(1.0 / static_cast<double>(rank_semantic), rho);
  return std::pow(0.5 * a + 0.5 * b, 1.0 / rho);
}

struct AssignmentPath {
  std::string doc;
  std::vector<std::size_t> path;        // dense class indices, root first
  std::vector<double> node_similarity;  // sim_O of path[i + 1]
};

/// Precomputed per-class inputs shared by every document's assignment.
struct SilverContext {
  const TopicTaxonomy* tax = nullptr;
  const CorpusStats* stats = nullptr;
  const EmbeddingStore* store = nullptr;
  std::vector<std::vector<std::string>> subtree_phrases;
  double rho = kDefaultRho;

  SilverContext(const TopicTaxonomy& t, const CorpusStats& s, const EmbeddingStore& e, double r = kDefaultRho)
      : tax(&t), stats(&s), store(&e), subtree_phrases(subtree_phrase_table(t)), rho(r) {}
};

namespace detail {

/// 1-based ranks of `scores` in descending order; ties resolved by position
/// (children are stored in ascending id order).
inline std::vector<std::size_t> descending_ranks(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> rank(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

}  // namespace detail

/// Descends from the root, at each node choosing the child with the best
/// ensemble score (ties: better lexical rank, then smaller id), until a leaf.
inline AssignmentPath assign_path(const Document& doc, const SilverContext& ctx) {
  const auto& tax = *ctx.tax;
  const auto doc_vec = ctx.store->get(Namespace::doc, doc.id);
  AssignmentPath out;
  out.doc = doc.id;
  std::size_t node = tax.root();
  out.path.push_back(node);
  while (!tax.is_leaf(node)) {
    const auto& children = tax.at(node).children;
    if (children.size() == 1) {
      out.path.push_back(children.front());
      out.node_similarity.push_back(1.0);
      node = children.front();
      continue;
    }
    std::vector<double> lex(children.size()), sem(children.size());
    for (std::size_t i = 0; i < children.size(); ++i) {
      const auto c = children[i];
      lex[i] = sim_lexical(doc, ctx.subtree_phrases[c], *ctx.stats);
      sem[i] = sim_semantic(doc_vec, ctx.subtree_phrases[c], *ctx.store, tax.at(c).id);
    }
    const auto rank_l = detail::descending_ranks(lex);
    const auto rank_s = detail::descending_ranks(sem);
    std::size_t best = 0;
    double best_sim = -1.0;
    for (std::size_t i = 0; i < children.size(); ++i) {
      const double s = sim_ensemble(rank_l[i], rank_s[i], ctx.rho);
      if (s > best_sim || (s == best_sim && rank_l[i] < rank_l[best])) {
        best = i;
        best_sim = s;
      }
    }
    node = children[best];
    out.path.push_back(node);
    out.node_similarity.push_back(best_sim);
  }
  return out;
}

inline AssignmentPath assign_path(const Document& doc, const TopicTaxonomy& tax, const CorpusStats& stats,
                                  const EmbeddingStore& store, double rho = kDefaultRho) {
  return assign_path(doc, SilverContext(tax, stats, store, rho));
}

struct SilverLabels {
  std::size_t n_classes = 0;
  std::vector<std::string> doc_ids;
  std::vector<std::vector<std::size_t>> positives;  // per document, root-first prefix of its path
  std::vector<AssignmentPath> paths;                // empty when loaded from file

  /// Dense 0/1 target vector for document `d`.
  std::vector<double> dense(std::size_t d) const {
    std::vector<double> y(n_classes, 0.0);
    for (auto j : positives.at(d)) y[j] = 1.0;
    return y;
  }
};

/// Median with the even-count convention of averaging the two middle values.
inline double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Positive sets from assignment paths: a document stays at a class of
/// level >= 2 only if its sim_O there is at least the median over the
/// documents assigned to that class. Dropping it there also drops it from
/// every deeper class on its path.
inline std::vector<std::vector<std::size_t>> median_filter(const std::vector<AssignmentPath>& paths,
                                                           const TopicTaxonomy& tax) {
  std::vector<std::vector<double>> assigned(tax.size());
  for (const auto& ap : paths) {
    if (ap.path.size() != ap.node_similarity.size() + 1) throw InputError("silver: malformed path for '" + ap.doc + "'");
    for (std::size_t i = 1; i < ap.path.size(); ++i) assigned[ap.path[i]].push_back(ap.node_similarity[i - 1]);
  }
  std::vector<double> median(tax.size(), 0.0);
  for (std::size_t j = 0; j < tax.size(); ++j) {
    if (tax.at(j).level >= 2) median[j] = median_of(assigned[j]);
  }
  std::vector<std::vector<std::size_t>> positives(paths.size());
  for (std::size_t d = 0; d < paths.size(); ++d) {
    const auto& ap = paths[d];
    auto& pos = positives[d];
    pos.push_back(ap.path.front());
    for (std::size_t i = 1; i < ap.path.size(); ++i) {
      const auto j = ap.path[i];
      if (tax.at(j).level >= 2 && ap.node_similarity[i - 1] < median[j]) break;
      pos.push_back(j);
    }
  }
  return positives;
}

/// Assigns every document top-down, then applies the median filter.
inline SilverLabels generate_silver_labels(const Corpus& corpus, const TopicTaxonomy& tax, const CorpusStats& stats,
                                           const EmbeddingStore& store, double rho = kDefaultRho,
                                           std::size_t workers = 1) {
  const SilverContext ctx(tax, stats, store, rho);
  SilverLabels labels;
  labels.n_classes = tax.size();
  labels.paths.resize(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t d) { labels.paths[d] = assign_path(corpus.docs[d], ctx); });
  labels.positives = median_filter(labels.paths, tax);
  for (const auto& ap : labels.paths) labels.doc_ids.push_back(ap.doc);
  return labels;
}

// Persistence: {"doc_id": "...", "positive_class_ids": [...]} per line.

inline void write_silver_labels(std::ostream& out, const SilverLabels& labels, const TopicTaxonomy& tax) {
  for (std::size_t d = 0; d < labels.doc_ids.size(); ++d) {
    ordered_json rec;
    rec["doc_id"] = labels.doc_ids[d];
    ordered_json ids = ordered_json::array();
    for (auto j : labels.positives[d]) ids.push_back(tax.at(j).id);
    rec["positive_class_ids"] = ids;
    out << rec.dump() << '\n';
  }
}

inline void save_silver_labels(const SilverLabels& labels, const TopicTaxonomy& tax, const std::string& path) {
  auto out = open_output(path);
  write_silver_labels(out, labels, tax);
}

inline SilverLabels parse_silver_labels(std::istream& in, const TopicTaxonomy& tax,
                                        const std::string& source = "silver labels") {
  SilverLabels labels;
  labels.n_classes = tax.size();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      const auto rec = json::parse(line);
      labels.doc_ids.push_back(rec.at("doc_id").get<std::string>());
      std::vector<std::size_t> pos;
      for (const auto& id : rec.at("positive_class_ids")) pos.push_back(tax.index_of(id.get<std::string>()));
      labels.positives.push_back(std::move(pos));
    } catch (const json::exception& e) {
      throw InputError(where + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return labels;
}

inline SilverLabels load_silver_labels(const std::string& path, const TopicTaxonomy& tax) {
  auto in = open_input(path);
  return parse_silver_labels(in, tax, path);
}

/// Reorders loaded labels to match the corpus document order.
inline SilverLabels align_to_corpus(const SilverLabels& labels, const Corpus& corpus) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < labels.doc_ids.size(); ++i) pos.emplace(labels.doc_ids[i], i);
  SilverLabels out;
  out.n_classes = labels.n_classes;
  for (const auto& doc : corpus.docs) {
    auto it = pos.find(doc.id);
    if (it == pos.end()) throw InputError("silver labels: no labels for document '" + doc.id + "'");
    out.doc_ids.push_back(doc.id);
    out.positives.push_back(labels.positives[it->second]);
  }
  return out;
}

}  // namespace toter
