#pragma once

// Query-time strategies: search space adjustment by bitwise topic overlap,
// first-stage retrieval fused with class relevance matching, and reranking
// with queries enriched by core phrases. Scorers are pluggable.

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "toter/corpus.hpp"
#include "toter/estimator.hpp"
#include "toter/relevance.hpp"
#include "toter/taxonomy.hpp"

namespace toter {

inline constexpr std::size_t kDefaultSsaSize = 2500;
inline constexpr std::size_t kDefaultRerankDepth = 100;
inline constexpr std::size_t kDefaultCorePhrases = 5;
inline constexpr std::size_t kDefaultFeedbackDocs = 10;
inline constexpr std::string_view kTopicTemplate = ", relevant topics: ";

struct Query {
  std::string id;
  std::string text;
};

/// Line-delimited {"id", "text"} records.
inline std::vector<Query> parse_queries(std::istream& in, const std::string& source = "queries") {
  std::vector<Query> out;
  std::unordered_map<std::string, bool> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      const auto rec = json::parse(line);
      Query q{rec.at("id").get<std::string>(), rec.value("text", std::string())};
      if (!seen.emplace(q.id, true).second) throw InputError(where + ": duplicate query id '" + q.id + "'");
      out.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Query> load_queries(const std::string& path) {
  auto in = open_input(path);
  return parse_queries(in, path);
}

// ---------------------------------------------------------------------------
// Ranked lists.

enum class Stage { ssa, retrieval, rerank };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ssa: return "ssa";
    case Stage::retrieval: return "retrieval";
    default: return "rerank";
  }
}

struct RankedEntry {
  std::string doc;
  double score = 0.0;
};

struct RankedList {
  std::string query;
  std::vector<RankedEntry> entries;  // descending score, unique docs
  Stage provenance = Stage::retrieval;

  RankedList truncated(std::size_t n) const {
    RankedList out{query, {}, provenance};
    out.entries.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(std::min(n, entries.size())));
    return out;
  }
};

namespace detail {
/// Descending score, ascending doc id.
inline void sort_entries(std::vector<RankedEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc < b.doc;
  });
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Scorers.

struct EnrichedQuery {
  std::string original;
  std::vector<std::string> core_phrases;
  std::string rendered;
};

class FirstStageScorer {
 public:
  virtual ~FirstStageScorer() = default;
  virtual double score(std::string_view query_id, std::string_view doc_id) const = 0;
  virtual std::string_view source() const = 0;
};

class RerankScorer {
 public:
  virtual ~RerankScorer() = default;
  virtual double score(const EnrichedQuery& query, std::string_view query_id, std::string_view doc_id) const = 0;
  virtual std::string_view source() const = 0;
};

/// Dual-encoder score from stored query and document vectors.
class EmbeddingScorer final : public FirstStageScorer {
 public:
  enum class Kind { inner_product, cosine };

  EmbeddingScorer(const EmbeddingStore& store, Kind kind) : store_(&store), kind_(kind) {}

  double score(std::string_view query_id, std::string_view doc_id) const override {
    const auto q = store_->get(Namespace::query, query_id);
    const auto d = store_->get(Namespace::doc, doc_id);
    return kind_ == Kind::cosine ? cosine(q, d) : inner_product(q, d);
  }

  std::string_view source() const override {
    return kind_ == Kind::cosine ? "embedding_cosine" : "embedding_inner_product";
  }

 private:
  const EmbeddingStore* store_;
  Kind kind_;
};

/// Scores keyed by (query id, doc id) from "qid<TAB>docid<TAB>score" lines.
class ExternalScores final : public FirstStageScorer, public RerankScorer {
 public:
  static ExternalScores parse(std::istream& in, const std::string& source = "scores") {
    ExternalScores s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const std::string where = source + ":" + std::to_string(lineno);
      const auto cols = split(line, '\t');
      if (cols.size() != 3) throw InputError(where + ": expected 'qid<TAB>docid<TAB>score'");
      s.scores_[key(trim(cols[0]), trim(cols[1]))] = parse_double(cols[2], where);
    }
    return s;
  }

  static ExternalScores load(const std::string& path) {
    auto in = open_input(path);
    return parse(in, path);
  }

  void set(std::string_view q, std::string_view d, double v) { scores_[key(q, d)] = v; }

  double score(std::string_view query_id, std::string_view doc_id) const override {
    auto it = scores_.find(key(query_id, doc_id));
    if (it == scores_.end()) {
      throw InputError("missing external score for (" + std::string(query_id) + ", " + std::string(doc_id) + ")");
    }
    return it->second;
  }

  double score(const EnrichedQuery&, std::string_view query_id, std::string_view doc_id) const override {
    return score(query_id, doc_id);
  }

  std::string_view source() const override { return "external_score_file"; }

 private:
  static std::string key(std::string_view q, std::string_view d) {
    std::string k(q);
    k.push_back('\t');
    k += d;
    return k;
  }
  std::unordered_map<std::string, double> scores_;
};

/// Desk-scale reranker: cosine(mean(h_q, h_p for p in P^q), h_d).
class PhraseComposedReranker final : public RerankScorer {
 public:
  explicit PhraseComposedReranker(const EmbeddingStore& store) : store_(&store) {}

  std::vector<double> compose(const EnrichedQuery& query, std::string_view query_id) const {
    const auto q = store_->get(Namespace::query, query_id);
    std::vector<double> acc(q.begin(), q.end());
    std::size_t n = 1;
    for (const auto& p : query.core_phrases) {
      auto hp = store_->find(Namespace::phrase, p);
      if (!hp) continue;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*hp)[i];
      ++n;
    }
    for (auto& x : acc) x /= static_cast<double>(n);
    return acc;
  }

  double score(const EnrichedQuery& query, std::string_view query_id, std::string_view doc_id) const override {
    const auto composed = compose(query, query_id);
    return cosine(std::span<const double>(composed), store_->get(Namespace::doc, doc_id));
  }

  std::string_view source() const override { return "phrase_composed"; }

 private:
  const EmbeddingStore* store_;
};

struct ScorerBinding {
  std::shared_ptr<const FirstStageScorer> first_stage;
  std::shared_ptr<const RerankScorer> reranker;
};

// ---------------------------------------------------------------------------
// Search space adjustment.

struct SsaResult {
  std::vector<std::size_t> docs;      // indices into the index, best first
  std::vector<std::size_t> overlaps;  // aligned with docs
};

/// The `size` documents with the largest topic overlap with the query
/// (ties: ascending doc id); everything when the corpus is smaller.
inline SsaResult ssa(const IndicatorVector& query_bits, std::span<const IndicatorVector> index,
                     std::span<const std::string> doc_ids, std::size_t size) {
  if (size < 1) throw InputError("ssa: size must be >= 1");
  if (index.size() != doc_ids.size()) throw InputError("ssa: index and id list differ in length");
  std::vector<std::size_t> overlap(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) overlap[i] = topic_overlap(query_bits, index[i]);
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = std::min(size, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (overlap[a] != overlap[b]) return overlap[a] > overlap[b];
                      return doc_ids[a] < doc_ids[b];
                    });
  order.resize(keep);
  SsaResult out;
  out.docs = order;
  for (auto i : order) out.overlaps.push_back(overlap[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval.

/// Relevance state for class relevance matching.
struct CrmInputs {
  std::span<const double> query_relevance;
  const IndicatorVector* query_bits = nullptr;
  const RelevanceTable* doc_relevance = nullptr;       // rows aligned with the corpus
  const std::vector<IndicatorVector>* doc_bits = nullptr;
  double weight = 1.0;
};

/// Exhaustive scoring of `space` (corpus indices), top-K by descending score.
inline RankedList retrieve(std::string_view query_id, std::span<const std::size_t> space, std::size_t k,
                           std::span<const std::string> doc_ids, const FirstStageScorer& scorer,
                           const std::optional<CrmInputs>& crm = std::nullopt) {
  std::vector<double> de(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) de[i] = scorer.score(query_id, doc_ids[space[i]]);
  std::vector<double> final_score = de;
  if (crm && !space.empty()) {
    std::vector<double> rel(space.size());
    std::vector<double> row(static_cast<std::size_t>(crm->doc_relevance->scores.cols()));
    for (std::size_t i = 0; i < space.size(); ++i) {
      const auto d = static_cast<Eigen::Index>(space[i]);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = crm->doc_relevance->scores(d, static_cast<Eigen::Index>(j));
      rel[i] = crm_score(crm->query_relevance, *crm->query_bits, row, (*crm->doc_bits)[space[i]]);
    }
    final_score = combine(de, rel, crm->weight);
  }
  RankedList out{std::string(query_id), {}, Stage::retrieval};
  out.entries.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) out.entries.push_back({doc_ids[space[i]], final_score[i]});
  detail::sort_entries(out.entries);
  if (out.entries.size() > k) out.entries.resize(k);
  return out;
}

// ---------------------------------------------------------------------------
// Query enrichment.

/// Top-k phrases of the node-local pools {P_j | b_qj = 1}, scored by summed
/// raw count over the feedback documents (ties: higher corpus df, then
/// lexicographic). Phrases absent from every feedback document are dropped.
inline std::vector<std::string> qep_phrases(const IndicatorVector& query_bits, const TopicTaxonomy& tax,
                                            std::span<const Document* const> top_docs, std::size_t k,
                                            const CorpusStats& stats) {
  if (k < 1) throw InputError("qep: k must be >= 1");
  if (query_bits.size() != tax.size()) throw InputError("qep: indicator length does not match taxonomy");
  std::set<std::string> pool;
  for (auto j : query_bits.members()) pool.insert(tax.at(j).phrases.begin(), tax.at(j).phrases.end());
  struct Scored {
    std::string phrase;
    std::uint64_t count;
    std::size_t df;
  };
  std::vector<Scored> scored;
  for (const auto& p : pool) {
    std::uint64_t c = 0;
    for (const Document* d : top_docs) c += d->count(p);
    if (c > 0) scored.push_back({p, c, stats.df(p)});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.df != b.df) return a.df > b.df;
    return a.phrase < b.phrase;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].phrase);
  return out;
}

/// Commas would make the rendered phrase list ambiguous.
inline std::string sanitize_phrase(std::string_view p) {
  std::string s(p);
  std::replace(s.begin(), s.end(), ',', ' ');
  return std::string(trim(s));
}

/// original + ", relevant topics: " + phrases joined by ", ".
inline EnrichedQuery enrich_query(std::string_view text, const std::vector<std::string>& phrases) {
  EnrichedQuery q;
  q.original = text;
  for (const auto& p : phrases) {
    auto s = sanitize_phrase(p);
    if (!s.empty()) q.core_phrases.push_back(std::move(s));
  }
  q.rendered = q.original;
  if (!q.core_phrases.empty()) {
    q.rendered += kTopicTemplate;
    for (std::size_t i = 0; i < q.core_phrases.size(); ++i) {
      if (i) q.rendered += ", ";
      q.rendered += q.core_phrases[i];
    }
  }
  return q;
}

/// Inverse of enrich_query.
inline std::pair<std::string, std::vector<std::string>> parse_enriched(std::string_view rendered) {
  const auto pos = rendered.rfind(kTopicTemplate);
  if (pos == std::string_view::npos) return {std::string(rendered), {}};
  std::vector<std::string> phrases;
  for (auto p : split(rendered.substr(pos + kTopicTemplate.size()), ',')) phrases.emplace_back(trim(p));
  return {std::string(rendered.substr(0, pos)), phrases};
}

/// Reorders candidates by reranker score (ties: ascending doc id).
inline RankedList rerank(const EnrichedQuery& query, std::string_view query_id, const RankedList& candidates,
                         const RerankScorer& scorer) {
  RankedList out{std::string(query_id), {}, Stage::rerank};
  out.entries.reserve(candidates.entries.size());
  for (const auto& e : candidates.entries) out.entries.push_back({e.doc, scorer.score(query, query_id, e.doc)});
  detail::sort_entries(out.entries);
  return out;
}

// ---------------------------------------------------------------------------
// TREC run files: "qid Q0 docid rank score tag".

inline void write_run(std::ostream& out, std::span<const RankedList> lists, std::string_view tag) {
  for (const auto& list : lists) {
    for (std::size_t r = 0; r < list.entries.size(); ++r) {
      out << list.query << " Q0 " << list.entries[r].doc << ' ' << (r + 1) << ' '
          << format_double(list.entries[r].score, 12) << ' ' << tag << '\n';
    }
  }
}

inline void save_run(std::span<const RankedList> lists, std::string_view tag, const std::string& path) {
  auto out = open_output(path);
  write_run(out, lists, tag);
}

/// Parses a run; entries are ordered by their rank column. Queries keep
/// first-appearance order.
inline std::vector<RankedList> parse_run(std::istream& in, const std::string& source = "run") {
  std::vector<RankedList> lists;
  std::unordered_map<std::string, std::size_t> pos;
  std::vector<std::vector<std::pair<long long, RankedEntry>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cols = split_ws(line);
    if (cols.size() != 6) throw InputError(where + ": expected 'qid Q0 docid rank score tag'");
    const std::string qid(cols[0]);
    auto [it, inserted] = pos.emplace(qid, lists.size());
    if (inserted) {
      lists.push_back({qid, {}, Stage::retrieval});
      rows.emplace_back();
    }
    rows[it->second].emplace_back(parse_int(cols[3], where), RankedEntry{std::string(cols[2]), parse_double(cols[4], where)});
  }
  for (std::size_t i = 0; i < lists.size(); ++i) {
    std::stable_sort(rows[i].begin(), rows[i].end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [rank, e] : rows[i]) lists[i].entries.push_back(std::move(e));
  }
  return lists;
}

inline std::vector<RankedList> load_run(const std::string& path) {
  auto in = open_input(path);
  return parse_run(in, path);
}

// ---------------------------------------------------------------------------
// Indicator index: "TOTERBIT", |C| (u32), count (u64), then per entity
// {u16 id length, id bytes, ceil(|C|/64) little-endian u64 words}.

inline constexpr std::string_view kIndicatorMagic = "TOTERBIT";

inline void write_indicator_index(std::ostream& out, std::span<const std::string> ids,
                                  std::span<const IndicatorVector> bits, std::size_t n_classes) {
  if (ids.size() != bits.size()) throw InputError("indicator index: ids and bitsets differ in length");
  binio::write_magic(out, kIndicatorMagic);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(n_classes));
  binio::write_le<std::uint64_t>(out, ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (bits[i].size() != n_classes) throw InputError("indicator index: bitset length mismatch");
    binio::write_id(out, ids[i]);
    for (auto w : bits[i].words()) binio::write_le<std::uint64_t>(out, w);
  }
}

inline void save_indicator_index(std::span<const std::string> ids, std::span<const IndicatorVector> bits,
                                 std::size_t n_classes, const std::string& path) {
  auto out = open_output(path, true);
  write_indicator_index(out, ids, bits, n_classes);
}

inline std::pair<std::vector<std::string>, std::vector<IndicatorVector>> read_indicator_index(
    std::istream& in, const std::string& source = "indicators") {
  binio::expect_magic(in, kIndicatorMagic, source);
  const auto n_classes = binio::read_le<std::uint32_t>(in, source);
  const auto count = binio::read_le<std::uint64_t>(in, source);
  std::vector<std::string> ids;
  std::vector<IndicatorVector> bits;
  for (std::uint64_t i = 0; i < count; ++i) {
    ids.push_back(binio::read_id(in, source));
    IndicatorVector v(n_classes);
    for (auto& w : v.words()) w = binio::read_le<std::uint64_t>(in, source);
    bits.push_back(std::move(v));
  }
  return {std::move(ids), std::move(bits)};
}

}  // namespace toter
