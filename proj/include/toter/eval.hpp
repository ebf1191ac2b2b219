#pragma once

// Ranking metrics over TREC-style qrels/run files, the metric report, and a
// synthetic planted-topic dataset generator used for desk-scale checks.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "toter/corpus.hpp"
#include "toter/inference.hpp"
#include "toter/taxonomy.hpp"

namespace toter {

/// query id -> (doc id -> grade).
using Qrels = std::map<std::string, std::map<std::string, int>>;

/// "qid 0 docid rel" per line.
inline Qrels parse_qrels(std::istream& in, const std::string& source = "qrels") {
  Qrels q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cols = split_ws(line);
    if (cols.size() != 4) throw InputError(where + ": expected 'qid 0 docid rel'");
    const auto grade = parse_int(cols[3], where);
    if (grade < 0) throw InputError(where + ": negative relevance grade");
    q[std::string(cols[0])][std::string(cols[2])] = static_cast<int>(grade);
  }
  return q;
}

inline Qrels load_qrels(const std::string& path) {
  auto in = open_input(path);
  return parse_qrels(in, path);
}

inline void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [qid, docs] : qrels)
    for (const auto& [did, grade] : docs) out << qid << " 0 " << did << ' ' << grade << '\n';
}

namespace detail {
inline std::size_t relevant_count(const std::map<std::string, int>& judged) {
  return static_cast<std::size_t>(
      std::count_if(judged.begin(), judged.end(), [](const auto& kv) { return kv.second > 0; }));
}
inline int grade_of(const std::map<std::string, int>& judged, const std::string& doc) {
  auto it = judged.find(doc);
  return it == judged.end() ? 0 : it->second;
}
inline void require_relevant(const std::map<std::string, int>& judged, const char* metric) {
  if (relevant_count(judged) == 0) throw InputError(std::string(metric) + ": query has no relevant documents");
}
}  // namespace detail

/// |relevant in top K| / |relevant|.
inline double recall_at_k(std::span<const std::string> ranking, const std::map<std::string, int>& judged,
                          std::size_t k) {
  detail::require_relevant(judged, "recall");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) hits += detail::grade_of(judged, ranking[i]) > 0;
  return static_cast<double>(hits) / static_cast<double>(detail::relevant_count(judged));
}

/// Exponential gain (2^rel - 1), log2(i + 1) discount, ideal DCG normaliser.
inline double ndcg_at_k(std::span<const std::string> ranking, const std::map<std::string, int>& judged, std::size_t k) {
  detail::require_relevant(judged, "ndcg");
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    const int g = detail::grade_of(judged, ranking[i]);
    if (g > 0) dcg += (std::exp2(g) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<int> grades;
  for (const auto& [d, g] : judged)
    if (g > 0) grades.push_back(g);
  std::sort(grades.rbegin(), grades.rend());
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
    ideal += (std::exp2(grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / ideal;
}

/// Mean precision at each hit rank in the top K, over min(|relevant|, K).
inline double map_at_k(std::span<const std::string> ranking, const std::map<std::string, int>& judged, std::size_t k) {
  detail::require_relevant(judged, "map");
  if (k == 0) return 0.0;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    if (detail::grade_of(judged, ranking[i]) > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(detail::relevant_count(judged), k));
}

inline std::vector<std::string> doc_ids_of(const RankedList& list) {
  std::vector<std::string> out;
  out.reserve(list.entries.size());
  for (const auto& e : list.entries) out.push_back(e.doc);
  return out;
}

enum class Metric { recall, ndcg, map };

inline constexpr std::array<Metric, 3> kAllMetrics{Metric::recall, Metric::ndcg, Metric::map};

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::recall: return "recall";
    case Metric::ndcg: return "ndcg";
    default: return "map";
  }
}

inline double compute_metric(Metric m, std::span<const std::string> ranking, const std::map<std::string, int>& judged,
                             std::size_t k) {
  switch (m) {
    case Metric::recall: return recall_at_k(ranking, judged, k);
    case Metric::ndcg: return ndcg_at_k(ranking, judged, k);
    default: return map_at_k(ranking, judged, k);
  }
}

/// What to do with judged queries the run does not contain.
enum class MissingQueries { zero, skip };

struct MetricReport {
  std::vector<std::size_t> cutoffs;
  std::vector<std::string> queries;                 // evaluated queries, sorted
  std::map<std::string, std::vector<double>> values;  // query -> [metric][cutoff] flattened
  std::vector<double> means;                        // [metric][cutoff] flattened
  std::vector<std::string> excluded;                // judged queries without relevant docs or skipped

  std::size_t slot(Metric m, std::size_t cutoff_index) const {
    return static_cast<std::size_t>(m) * cutoffs.size() + cutoff_index;
  }

  double mean(Metric m, std::size_t cutoff) const {
    for (std::size_t c = 0; c < cutoffs.size(); ++c)
      if (cutoffs[c] == cutoff) return means[slot(m, c)];
    throw InputError("report: cutoff " + std::to_string(cutoff) + " not evaluated");
  }

  double value(const std::string& query, Metric m, std::size_t cutoff) const {
    for (std::size_t c = 0; c < cutoffs.size(); ++c)
      if (cutoffs[c] == cutoff) return values.at(query)[slot(m, c)];
    throw InputError("report: cutoff " + std::to_string(cutoff) + " not evaluated");
  }
};

/// Per-query metrics for every (metric, cutoff) and their arithmetic means.
inline MetricReport evaluate(std::span<const RankedList> run, const Qrels& qrels, std::vector<std::size_t> cutoffs,
                             MissingQueries missing = MissingQueries::zero) {
  if (cutoffs.empty()) throw UsageError("evaluate: no cutoffs");
  MetricReport rep;
  rep.cutoffs = std::move(cutoffs);
  std::map<std::string, const RankedList*> by_query;
  for (const auto& list : run) {
    if (!qrels.count(list.query)) throw InputError("evaluate: run query '" + list.query + "' absent from qrels");
    by_query[list.query] = &list;
  }
  const std::size_t slots = kAllMetrics.size() * rep.cutoffs.size();
  rep.means.assign(slots, 0.0);
  for (const auto& [qid, judged] : qrels) {
    if (detail::relevant_count(judged) == 0) {
      Log::warn("eval", "query without relevant documents excluded", {{"query", qid}});
      rep.excluded.push_back(qid);
      continue;
    }
    auto it = by_query.find(qid);
    std::vector<double> vals(slots, 0.0);
    if (it == by_query.end()) {
      if (missing == MissingQueries::skip) {
        rep.excluded.push_back(qid);
        continue;
      }
    } else {
      const auto ranking = doc_ids_of(*it->second);
      for (auto m : kAllMetrics)
        for (std::size_t c = 0; c < rep.cutoffs.size(); ++c)
          vals[rep.slot(m, c)] = compute_metric(m, ranking, judged, rep.cutoffs[c]);
    }
    rep.queries.push_back(qid);
    rep.values.emplace(qid, std::move(vals));
  }
  for (const auto& q : rep.queries) {
    const auto& v = rep.values.at(q);
    for (std::size_t s = 0; s < slots; ++s) rep.means[s] += v[s];
  }
  if (!rep.queries.empty()) {
    for (auto& m : rep.means) m /= static_cast<double>(rep.queries.size());
  }
  return rep;
}

/// TSV with header; per-query rows, then mean rows under query "all".
inline void write_report(std::ostream& out, const MetricReport& rep, std::string_view stage = "") {
  out << "stage\tquery\tmetric\tcutoff\tvalue\n";
  const std::string st = stage.empty() ? "-" : std::string(stage);
  auto row = [&](const std::string& q, Metric m, std::size_t c, double v) {
    out << st << '\t' << q << '\t' << to_string(m) << '\t' << c << '\t' << format_fixed(v, 12) << '\n';
  };
  for (const auto& q : rep.queries) {
    const auto& v = rep.values.at(q);
    for (auto m : kAllMetrics)
      for (std::size_t c = 0; c < rep.cutoffs.size(); ++c) row(q, m, rep.cutoffs[c], v[rep.slot(m, c)]);
  }
  for (auto m : kAllMetrics)
    for (std::size_t c = 0; c < rep.cutoffs.size(); ++c) row("all", m, rep.cutoffs[c], rep.means[rep.slot(m, c)]);
}

inline std::vector<std::size_t> parse_cutoffs(std::string_view s) {
  std::vector<std::size_t> out;
  for (auto part : split(s, ',')) {
    const auto v = parse_int(part, "cutoffs");
    if (v < 1) throw UsageError("cutoffs must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic planted-topic datasets.

struct SyntheticConfig {
  std::vector<std::size_t> branching{3, 3, 3};  // children per node at each level; size = depth
  std::size_t docs_per_leaf = 74;
  std::size_t dim = 32;
  double noise = 0.1;           // per-coordinate Gaussian sigma on document vectors
  double query_noise = 0.3;     // < 0: same as noise
  std::size_t queries = 100;
  std::uint64_t seed = 6;
  std::size_t phrases_per_class = 4;
  double child_spread = 1.5;    // centroid offset at level 1
  double spread_decay = 0.7;    // multiplier per deeper level
  double phrase_noise = 0.05;
  std::size_t mentions_per_doc = 12;
  double topical_mention_rate = 0.6;  // remaining mentions are uniform background phrases
  std::size_t style_count = 4;        // topic-independent clusters shared by documents and queries
  double style_strength = 0.7;        // offset added along the entity's style direction

  ordered_json to_json() const {
    ordered_json j;
    j["branching"] = branching;
    j["docs_per_leaf"] = docs_per_leaf;
    j["dim"] = dim;
    j["noise"] = noise;
    j["query_noise"] = query_noise;
    j["queries"] = queries;
    j["seed"] = seed;
    j["phrases_per_class"] = phrases_per_class;
    j["child_spread"] = child_spread;
    j["spread_decay"] = spread_decay;
    j["phrase_noise"] = phrase_noise;
    j["mentions_per_doc"] = mentions_per_doc;
    j["topical_mention_rate"] = topical_mention_rate;
    j["style_count"] = style_count;
    j["style_strength"] = style_strength;
    return j;
  }
};

struct SyntheticDataset {
  TopicTaxonomy taxonomy;
  Corpus corpus;
  EmbeddingStore store;
  std::vector<Query> queries;
  Qrels qrels;
  ordered_json manifest;
  std::vector<std::size_t> doc_leaf;  // planted leaf (taxonomy index) per document
  std::vector<std::vector<double>> centroids;  // unit centroid per class (taxonomy index)
};

namespace detail {

inline std::vector<double> random_direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

inline std::vector<float> noisy_unit(const std::vector<double>& centre, double sigma, Rng& rng,
                                     const std::vector<double>* offset = nullptr, double strength = 0.0) {
  std::vector<double> v = centre;
  if (offset)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += strength * (*offset)[i];
  if (sigma > 0.0)
    for (auto& x : v) x += sigma * rng.normal();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(norm > 0.0 ? v[i] / norm : v[i]);
  return out;
}

inline std::string pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace detail

/// Builds a tree with the configured branching, a unit centroid per class
/// (children perturb their parent), documents drawn around leaf centroids
/// with phrase mentions favouring their ancestor classes, and queries drawn
/// from random leaves whose leaf-mates are the relevant documents.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.branching.empty()) throw InputError("synth: depth must be >= 1");
  if (std::any_of(cfg.branching.begin(), cfg.branching.end(), [](std::size_t b) { return b == 0; })) {
    throw InputError("synth: branching factors must be positive");
  }
  if (cfg.docs_per_leaf == 0) throw InputError("synth: zero documents per leaf");
  if (cfg.dim == 0) throw InputError("synth: zero dimension");
  if (cfg.phrases_per_class == 0) throw InputError("synth: zero phrases per class");
  if (cfg.queries == 0) throw InputError("synth: zero queries");

  Rng rng(cfg.seed);
  struct Node {
    std::string id;
    std::size_t parent;
    int level;
    std::vector<double> centroid;
    std::vector<std::string> phrases;
  };
  std::vector<Node> nodes;
  nodes.push_back({"c", kNoParent, 0, detail::random_direction(rng, cfg.dim), {}});
  std::vector<std::size_t> frontier{0};
  double spread = cfg.child_spread;
  for (std::size_t level = 0; level < cfg.branching.size(); ++level) {
    std::vector<std::size_t> next;
    for (auto p : frontier) {
      for (std::size_t c = 0; c < cfg.branching[level]; ++c) {
        const auto dir = detail::random_direction(rng, cfg.dim);
        std::vector<double> centroid = nodes[p].centroid;
        double norm = 0.0;
        for (std::size_t i = 0; i < cfg.dim; ++i) {
          centroid[i] += spread * dir[i];
          norm += centroid[i] * centroid[i];
        }
        norm = std::sqrt(norm);
        for (auto& x : centroid) x /= norm;
        nodes.push_back({nodes[p].id + "." + std::to_string(c + 1), p, static_cast<int>(level) + 1, centroid, {}});
        next.push_back(nodes.size() - 1);
      }
    }
    frontier = std::move(next);
    spread *= cfg.spread_decay;
  }
  const std::vector<std::size_t> leaves = frontier;
  std::vector<std::vector<double>> styles;
  for (std::size_t i = 0; i < std::max<std::size_t>(cfg.style_count, 1); ++i) styles.push_back(detail::random_direction(rng, cfg.dim));
  auto style_of = [&]() -> const std::vector<double>* { return &styles[rng.below(styles.size())]; };

  SyntheticDataset ds;
  std::vector<ClassRecord> records;
  for (auto& n : nodes) {
    for (std::size_t k = 0; k < cfg.phrases_per_class; ++k) n.phrases.push_back("topic " + n.id + " term " + std::to_string(k + 1));
    records.push_back({n.id, n.phrases.front(), n.parent == kNoParent ? std::vector<std::string>{} : std::vector<std::string>{nodes[n.parent].id}, n.phrases});
    for (const auto& p : n.phrases) ds.store.add(Namespace::phrase, p, detail::noisy_unit(n.centroid, cfg.phrase_noise, rng));
    ds.store.add(Namespace::class_name, n.id, *ds.store.find(Namespace::phrase, n.phrases.front()));
  }
  ds.taxonomy = TopicTaxonomy::from_records(records);
  ds.centroids.resize(nodes.size());
  for (const auto& n : nodes) ds.centroids[ds.taxonomy.index_of(n.id)] = n.centroid;

  std::vector<std::string> all_phrases;
  for (const auto& n : nodes) all_phrases.insert(all_phrases.end(), n.phrases.begin(), n.phrases.end());

  auto ancestors = [&](std::size_t leaf) {
    std::vector<std::size_t> path;
    for (std::size_t u = leaf; u != kNoParent && nodes[u].parent != kNoParent; u = nodes[u].parent) path.push_back(u);
    return path;  // leaf up to level 1
  };

  std::vector<Document> docs;
  std::map<std::size_t, std::vector<std::string>> leaf_docs;
  std::size_t doc_counter = 0;
  const std::size_t total_docs = leaves.size() * cfg.docs_per_leaf;
  const int width = static_cast<int>(std::to_string(total_docs).size());
  for (auto leaf : leaves) {
    const auto path = ancestors(leaf);
    for (std::size_t i = 0; i < cfg.docs_per_leaf; ++i) {
      Document d;
      d.id = "d" + detail::pad(++doc_counter, width);
      for (std::size_t mnt = 0; mnt < cfg.mentions_per_doc; ++mnt) {
        const std::string* phrase;
        if (rng.uniform() < cfg.topical_mention_rate) {
          const auto& cls = nodes[path[rng.below(path.size())]];
          phrase = &cls.phrases[rng.below(cls.phrases.size())];
        } else {
          phrase = &all_phrases[rng.below(all_phrases.size())];
        }
        ++d.phrase_counts[*phrase];
      }
      d.token_length = static_cast<std::uint32_t>(cfg.mentions_per_doc * 3);
      const auto* style = style_of();
      ds.store.add(Namespace::doc, d.id, detail::noisy_unit(nodes[leaf].centroid, cfg.noise, rng, style, cfg.style_strength));
      ds.doc_leaf.push_back(*ds.taxonomy.find(nodes[leaf].id));
      leaf_docs[leaf].push_back(d.id);
      docs.push_back(std::move(d));
    }
  }
  ds.corpus = make_corpus(std::move(docs));

  const double qnoise = cfg.query_noise < 0.0 ? cfg.noise : cfg.query_noise;
  const int qwidth = static_cast<int>(std::to_string(cfg.queries).size());
  for (std::size_t q = 0; q < cfg.queries; ++q) {
    const auto leaf = leaves[rng.below(leaves.size())];
    Query query{"q" + detail::pad(q + 1, qwidth), "about " + nodes[nodes[leaf].parent].phrases.front()};
    const auto* style = style_of();
    ds.store.add(Namespace::query, query.id, detail::noisy_unit(nodes[leaf].centroid, qnoise, rng, style, cfg.style_strength));
    for (const auto& did : leaf_docs[leaf]) ds.qrels[query.id][did] = 1;
    ds.queries.push_back(std::move(query));
  }

  ds.manifest["generator"] = "planted-topic";
  ds.manifest["config"] = cfg.to_json();
  ds.manifest["classes"] = ds.taxonomy.size();
  ds.manifest["documents"] = ds.corpus.size();
  ds.manifest["queries"] = ds.queries.size();
  return ds;
}

/// File names written by save_synthetic (relative to the dataset directory).
struct SyntheticLayout {
  static constexpr const char* taxonomy = "taxonomy.jsonl";
  static constexpr const char* corpus = "corpus.jsonl";
  static constexpr const char* queries = "queries.jsonl";
  static constexpr const char* qrels = "qrels.txt";
  static constexpr const char* doc_embeddings = "emb_doc.bin";
  static constexpr const char* phrase_embeddings = "emb_phrase.bin";
  static constexpr const char* class_embeddings = "emb_class_name.bin";
  static constexpr const char* query_embeddings = "emb_query.bin";
  static constexpr const char* manifest = "manifest.json";
  static constexpr const char* config = "pipeline.conf";
};

inline void save_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  using L = SyntheticLayout;
  save_taxonomy(ds.taxonomy, (dir / L::taxonomy).string());
  {
    auto out = open_output((dir / L::corpus).string());
    write_corpus(out, ds.corpus);
  }
  {
    auto out = open_output((dir / L::queries).string());
    for (const auto& q : ds.queries) {
      ordered_json rec;
      rec["id"] = q.id;
      rec["text"] = q.text;
      out << rec.dump() << '\n';
    }
  }
  {
    auto out = open_output((dir / L::qrels).string());
    write_qrels(out, ds.qrels);
  }
  save_embeddings_binary(ds.store.table(Namespace::doc), (dir / L::doc_embeddings).string());
  save_embeddings_binary(ds.store.table(Namespace::phrase), (dir / L::phrase_embeddings).string());
  save_embeddings_binary(ds.store.table(Namespace::class_name), (dir / L::class_embeddings).string());
  save_embeddings_binary(ds.store.table(Namespace::query), (dir / L::query_embeddings).string());
  {
    auto out = open_output((dir / L::manifest).string());
    out << ds.manifest.dump(2) << '\n';
  }
  {
    auto out = open_output((dir / L::config).string());
    out << "# generated by synth; paths are relative to this file\n"
        << "taxonomy = " << L::taxonomy << '\n'
        << "corpus = " << L::corpus << '\n'
        << "queries = " << L::queries << '\n'
        << "qrels = " << L::qrels << '\n'
        << "doc_embeddings = " << L::doc_embeddings << '\n'
        << "phrase_embeddings = " << L::phrase_embeddings << '\n'
        << "class_embeddings = " << L::class_embeddings << '\n'
        << "query_embeddings = " << L::query_embeddings << '\n'
        << "output_dir = run\n"
        << "\n# training and search settings suited to a corpus of this size\n"
        << "learning_rate = 0.1\n"
        << "batch_size = 64\n"
        << "ssa_size = " << std::max<std::size_t>(1, ds.corpus.size() / 4) << '\n';
  }
}

}  // namespace toter
