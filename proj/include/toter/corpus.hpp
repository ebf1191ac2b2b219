#pragma once

// Documents, lexical statistics and frozen embedding tables.

#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "toter/util.hpp"

namespace toter {

struct Document {
  std::string id;
  std::map<std::string, std::uint32_t> phrase_counts;  // strictly positive counts
  std::uint32_t token_length = 1;

  std::uint32_t count(const std::string& phrase) const {
    auto it = phrase_counts.find(phrase);
    return it == phrase_counts.end() ? 0 : it->second;
  }
};

struct CorpusStats {
  std::size_t n_docs = 0;
  std::unordered_map<std::string, std::size_t> doc_frequency;

  std::size_t df(const std::string& phrase) const {
    auto it = doc_frequency.find(phrase);
    return it == doc_frequency.end() ? 0 : it->second;
  }
};

struct Corpus {
  std::vector<Document> docs;
  CorpusStats stats;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const { return docs.size(); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index.find(std::string(id));
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

/// Smoothed idf: ln((N + 1) / (df + 1)) + 1. Always >= 1 for df <= N.
inline double idf(const CorpusStats& stats, const std::string& phrase) {
  const double n = static_cast<double>(stats.n_docs);
  const double df = static_cast<double>(stats.df(phrase));
  return std::log((n + 1.0) / (df + 1.0)) + 1.0;
}

/// tf(p, d) * idf(p) with tf the raw phrase count.
inline double term_weight(const CorpusStats& stats, const Document& doc, const std::string& phrase) {
  const auto tf = doc.count(phrase);
  if (tf == 0) return 0.0;
  return static_cast<double>(tf) * idf(stats, phrase);
}

namespace detail {
inline std::atomic<std::size_t> zero_norm_warnings{0};
}

/// Cosine similarity accumulated in double. A zero-norm argument yields 0.
template <typename A, typename B>
double cosine(std::span<const A> u, std::span<const B> v) {
  if (u.size() != v.size()) {
    throw InputError("cosine: length mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = static_cast<double>(u[i]);
    const double b = static_cast<double>(v[i]);
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) {
    if (detail::zero_norm_warnings.fetch_add(1) < 5) Log::warn("corpus", "cosine of a zero-norm embedding");
    return 0.0;
  }
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  return cosine(std::span<const double>(u), std::span<const double>(v));
}

template <typename A, typename B>
double inner_product(std::span<const A> u, std::span<const B> v) {
  if (u.size() != v.size()) throw InputError("inner_product: length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return dot;
}

// ---------------------------------------------------------------------------
// Phrase matching for raw text: case-folded tokens, greedy longest match.

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

class PhraseMatcher {
 public:
  PhraseMatcher() = default;

  explicit PhraseMatcher(const std::vector<std::string>& vocabulary) {
    for (const auto& phrase : vocabulary) {
      const auto toks = tokenize(phrase);
      if (toks.empty()) continue;
      max_len_ = std::max(max_len_, toks.size());
      table_.emplace(join(toks, 0, toks.size()), phrase);
    }
  }

  bool empty() const { return table_.empty(); }

  /// Returns phrase counts and the token count of `text`.
  std::pair<std::map<std::string, std::uint32_t>, std::size_t> match(std::string_view text) const {
    const auto toks = tokenize(text);
    std::map<std::string, std::uint32_t> counts;
    std::size_t i = 0;
    while (i < toks.size()) {
      std::size_t advance = 1;
      for (std::size_t len = std::min(max_len_, toks.size() - i); len >= 1; --len) {
        auto it = table_.find(join(toks, i, len));
        if (it != table_.end()) {
          ++counts[it->second];
          advance = len;
          break;
        }
      }
      i += advance;
    }
    return {std::move(counts), toks.size()};
  }

 private:
  static std::string join(const std::vector<std::string>& toks, std::size_t from, std::size_t len) {
    std::string s;
    for (std::size_t k = 0; k < len; ++k) {
      if (k) s.push_back(' ');
      s += toks[from + k];
    }
    return s;
  }

  // std::map keeps the first spelling when two phrases fold to the same key.
  std::map<std::string, std::string> table_;
  std::size_t max_len_ = 0;
};

/// Recomputes df and N from the document list.
inline CorpusStats compute_stats(const std::vector<Document>& docs) {
  CorpusStats stats;
  stats.n_docs = docs.size();
  for (const auto& d : docs) {
    for (const auto& [p, c] : d.phrase_counts) {
      if (c > 0) ++stats.doc_frequency[p];
    }
  }
  return stats;
}

inline Corpus make_corpus(std::vector<Document> docs) {
  if (docs.empty()) throw InputError("empty corpus");
  Corpus corpus;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!corpus.index.emplace(docs[i].id, i).second) {
      throw InputError("corpus: duplicate document id '" + docs[i].id + "'");
    }
  }
  corpus.stats = compute_stats(docs);
  corpus.docs = std::move(docs);
  return corpus;
}

/// Line-delimited records: {"id", "text"} or {"id", "phrase_counts": {p: n}, "token_length"?}.
/// Raw-text records need a non-empty matcher.
inline Corpus parse_corpus(std::istream& in, const PhraseMatcher& matcher, const std::string& source = "corpus") {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(where + ": parse failure: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
      throw InputError(where + ": record needs a string 'id'");
    }
    Document d;
    d.id = rec["id"].get<std::string>();
    try {
      if (rec.contains("phrase_counts")) {
        std::uint64_t total = 0;
        for (auto& [p, c] : rec["phrase_counts"].items()) {
          const auto n = c.get<long long>();
          if (n < 0) throw InputError(where + ": negative count for phrase '" + p + "'");
          if (n == 0) continue;
          d.phrase_counts[p] = static_cast<std::uint32_t>(n);
          total += static_cast<std::uint64_t>(n);
        }
        const auto len = rec.contains("token_length") ? rec["token_length"].get<long long>()
                                                      : static_cast<long long>(total);
        d.token_length = static_cast<std::uint32_t>(std::max<long long>(1, len));
      } else if (rec.contains("text")) {
        if (matcher.empty()) throw InputError(where + ": raw text needs a phrase vocabulary");
        auto [counts, ntok] = matcher.match(rec["text"].get<std::string>());
        d.phrase_counts = std::move(counts);
        d.token_length = static_cast<std::uint32_t>(std::max<std::size_t>(1, ntok));
      } else {
        throw InputError(where + ": record needs 'text' or 'phrase_counts'");
      }
    } catch (const json::exception& e) {
      throw InputError(where + ": " + e.what());
    }
    docs.push_back(std::move(d));
  }
  if (docs.empty()) throw InputError(source + ": empty corpus");
  return make_corpus(std::move(docs));
}

inline Corpus load_corpus(const std::string& path, const PhraseMatcher& matcher = {}) {
  auto in = open_input(path);
  return parse_corpus(in, matcher, path);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& d : corpus.docs) {
    ordered_json rec;
    rec["id"] = d.id;
    ordered_json counts = ordered_json::object();
    for (const auto& [p, c] : d.phrase_counts) counts[p] = c;
    rec["phrase_counts"] = counts;
    rec["token_length"] = d.token_length;
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Embeddings.

enum class Namespace { doc = 0, phrase = 1, class_name = 2, query = 3 };

inline constexpr std::array<std::string_view, 4> kNamespaceNames{"doc", "phrase", "class_name", "query"};

inline std::string_view to_string(Namespace ns) { return kNamespaceNames[static_cast<std::size_t>(ns)]; }

/// One namespace of vectors, stored contiguously in insertion order.
class EmbeddingTable {
 public:
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  void add(const std::string& id, std::span<const float> v, const std::string& where = "embeddings") {
    if (v.empty()) throw InputError(where + ": empty vector for '" + id + "'");
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_) {
      throw InputError(where + ": dim mismatch for '" + id + "': got " + std::to_string(v.size()) +
                       ", expected " + std::to_string(dim_));
    }
    for (float x : v) {
      if (!std::isfinite(x)) throw InputError(where + ": non-finite value in '" + id + "'");
    }
    if (!rows_.emplace(id, ids_.size()).second) throw InputError(where + ": duplicate id '" + id + "'");
    ids_.push_back(id);
    data_.insert(data_.end(), v.begin(), v.end());
  }

  std::optional<std::span<const float>> find(std::string_view id) const {
    auto it = rows_.find(std::string(id));
    if (it == rows_.end()) return std::nullopt;
    return row(it->second);
  }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> rows_;
};

/// Frozen vectors keyed by (namespace, id). All namespaces share one dim.
class EmbeddingStore {
 public:
  std::size_t dim() const { return dim_; }

  void add(Namespace ns, const std::string& id, std::span<const float> v, const std::string& where = "embeddings") {
    if (dim_ != 0 && v.size() != dim_) {
      throw InputError(where + ": dim mismatch for '" + id + "' in namespace " + std::string(to_string(ns)) +
                       ": got " + std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    }
    table(ns).add(id, v, where);
    dim_ = v.size();
  }

  /// Registers every row of `t` under `ns`.
  void add_table(Namespace ns, const EmbeddingTable& t, const std::string& where = "embeddings") {
    for (std::size_t r = 0; r < t.size(); ++r) add(ns, t.ids()[r], t.row(r), where);
  }

  std::optional<std::span<const float>> find(Namespace ns, std::string_view id) const {
    return table(ns).find(id);
  }

  std::span<const float> get(Namespace ns, std::string_view id) const {
    auto v = find(ns, id);
    if (!v) {
      throw InputError("missing " + std::string(to_string(ns)) + " embedding for '" + std::string(id) + "'");
    }
    return *v;
  }

  EmbeddingTable& table(Namespace ns) { return tables_[static_cast<std::size_t>(ns)]; }
  const EmbeddingTable& table(Namespace ns) const { return tables_[static_cast<std::size_t>(ns)]; }

 private:
  std::size_t dim_ = 0;
  std::array<EmbeddingTable, 4> tables_;
};

inline constexpr std::string_view kEmbeddingMagic = "TOTEREMB";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

/// TSV: "id<TAB>space-separated decimals" per line.
inline EmbeddingTable parse_embeddings_tsv(std::istream& in, const std::string& source) {
  EmbeddingTable t;
  std::string line;
  std::size_t lineno = 0;
  std::vector<float> buf;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError(where + ": expected 'id<TAB>values'");
    const std::string id = line.substr(0, tab);
    buf.clear();
    for (auto tok : split_ws(std::string_view(line).substr(tab + 1))) {
      buf.push_back(static_cast<float>(parse_double(tok, where)));
    }
    t.add(id, buf, where);
  }
  return t;
}

inline EmbeddingTable parse_embeddings_binary(std::istream& in, const std::string& source) {
  binio::expect_magic(in, kEmbeddingMagic, source);
  const auto version = binio::read_le<std::uint32_t>(in, source);
  if (version != kEmbeddingVersion) throw InputError(source + ": unsupported version " + std::to_string(version));
  const auto dim = binio::read_le<std::uint32_t>(in, source);
  const auto count = binio::read_le<std::uint64_t>(in, source);
  if (dim == 0 && count > 0) throw InputError(source + ": zero dim");
  EmbeddingTable t;
  std::vector<float> buf(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::string where = source + ": record " + std::to_string(r);
    auto id = binio::read_id(in, where);
    for (auto& x : buf) x = binio::read_le<float>(in, where);
    t.add(id, buf, where);
  }
  return t;
}

/// Reads either format; binary is recognised by its magic.
inline EmbeddingTable load_embedding_table(const std::string& path) {
  auto in = open_input(path, true);
  char head[8] = {};
  in.read(head, sizeof head);
  const bool binary = in.gcount() == 8 && std::string_view(head, 8) == kEmbeddingMagic;
  in.clear();
  in.seekg(0);
  return binary ? parse_embeddings_binary(in, path) : parse_embeddings_tsv(in, path);
}

inline void load_embeddings(EmbeddingStore& store, const std::string& path, Namespace ns) {
  store.add_table(ns, load_embedding_table(path), path);
}

inline void write_embeddings_binary(std::ostream& out, const EmbeddingTable& t) {
  binio::write_magic(out, kEmbeddingMagic);
  binio::write_le<std::uint32_t>(out, kEmbeddingVersion);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
  binio::write_le<std::uint64_t>(out, t.size());
  for (std::size_t r = 0; r < t.size(); ++r) {
    binio::write_id(out, t.ids()[r]);
    for (float x : t.row(r)) binio::write_le<float>(out, x);
  }
}

inline void save_embeddings_binary(const EmbeddingTable& t, const std::string& path) {
  auto out = open_output(path, true);
  write_embeddings_binary(out, t);
}

inline void write_embeddings_tsv(std::ostream& out, const EmbeddingTable& t) {
  for (std::size_t r = 0; r < t.size(); ++r) {
    out << t.ids()[r] << '\t';
    bool first = true;
    for (float x : t.row(r)) {
      if (!first) out << ' ';
      first = false;
      out << format_double(static_cast<double>(x), 9);
    }
    out << '\n';
  }
}

}  // namespace toter
