#pragma once

// Run configuration and the end-to-end driver:
// labels -> train -> export -> search (ssa, retrieve, rerank) -> eval.
// Each stage reads its inputs from the run directory, so subcommands and the
// full pipeline share one code path.

#include <openssl/evp.h>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "toter/corpus.hpp"
#include "toter/estimator.hpp"
#include "toter/eval.hpp"
#include "toter/inference.hpp"
#include "toter/silver.hpp"
#include "toter/taxonomy.hpp"

namespace toter {

namespace fs = std::filesystem;

struct RunConfig {
  // Inputs and outputs.
  std::string taxonomy, corpus, queries, qrels;
  std::string doc_embeddings, phrase_embeddings, class_embeddings, query_embeddings;
  std::string first_stage_scores, reranker_scores;
  std::string output_dir = "run";

  // Hyperparameters.
  double rho = kDefaultRho;
  double m = kDefaultRetentionPercent;
  std::size_t k = kDefaultCorePhrases;
  std::size_t t = 25;
  std::size_t neighbor_count = 10;
  std::size_t ssa_size = kDefaultSsaSize;
  std::size_t rerank_depth = kDefaultRerankDepth;
  std::size_t retrieve_depth = 1000;
  std::size_t qep_top_docs = kDefaultFeedbackDocs;
  std::size_t layers = 2;
  std::size_t hidden_dim = 0;
  double learning_rate = 1e-2;
  std::size_t warmup_epochs = 50;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 0;
  double crm_weight = 1.0;
  std::uint64_t seed = 42;

  // Mode flags.
  bool ssa = true;
  bool crm = true;
  bool qep = true;
  std::string mode = "ckd";
  std::string level_focus = "all";
  std::string first_stage = "embedding_inner_product";
  std::string reranker = "phrase_composed";
  std::string cutoffs = "10,100,1000";
  std::string missing_queries = "zero";
  std::size_t workers = default_workers();

  std::map<std::string, std::string> sources;  // key -> default | config | flag

  TrainConfig train_config() const {
    TrainConfig c;
    c.warmup_epochs = warmup_epochs;
    c.max_epochs = max_epochs;
    c.learning_rate = learning_rate;
    c.update_period = t;
    c.neighbor_count = neighbor_count;
    c.layer_count = layers;
    c.hidden_dim = hidden_dim;
    c.batch_size = batch_size;
    c.retention_percent = m;
    c.crm_weight = crm_weight;
    c.seed = seed;
    c.mode = parse_train_mode(mode);
    c.workers = workers;
    return c;
  }
};

namespace detail {

struct ConfigField {
  const char* key;
  bool is_path;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw InputError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
  const auto x = parse_int(v, "config: " + key);
  if (x < 0) throw InputError("config: '" + key + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

template <typename T>
ConfigField field(const char* key, T RunConfig::*member, bool is_path = false) {
  ConfigField f{key, is_path, {}, {}};
  f.get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, bool>) {
      return std::string(c.*member ? "true" : "false");
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*member, 17);
    } else {
      return std::to_string(c.*member);
    }
  };
  f.set = [member, key](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = v;
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(v, key);
    } else if constexpr (std::is_same_v<T, double>) {
      c.*member = parse_double(v, std::string("config: ") + key);
    } else {
      c.*member = static_cast<T>(parse_size(v, key));
    }
  };
  return f;
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      field("taxonomy", &RunConfig::taxonomy, true),
      field("corpus", &RunConfig::corpus, true),
      field("queries", &RunConfig::queries, true),
      field("qrels", &RunConfig::qrels, true),
      field("doc_embeddings", &RunConfig::doc_embeddings, true),
      field("phrase_embeddings", &RunConfig::phrase_embeddings, true),
      field("class_embeddings", &RunConfig::class_embeddings, true),
      field("query_embeddings", &RunConfig::query_embeddings, true),
      field("first_stage_scores", &RunConfig::first_stage_scores, true),
      field("reranker_scores", &RunConfig::reranker_scores, true),
      field("output_dir", &RunConfig::output_dir, true),
      field("rho", &RunConfig::rho),
      field("m", &RunConfig::m),
      field("k", &RunConfig::k),
      field("t", &RunConfig::t),
      field("neighbor_count", &RunConfig::neighbor_count),
      field("ssa_size", &RunConfig::ssa_size),
      field("rerank_depth", &RunConfig::rerank_depth),
      field("retrieve_depth", &RunConfig::retrieve_depth),
      field("qep_top_docs", &RunConfig::qep_top_docs),
      field("layers", &RunConfig::layers),
      field("hidden_dim", &RunConfig::hidden_dim),
      field("learning_rate", &RunConfig::learning_rate),
      field("warmup_epochs", &RunConfig::warmup_epochs),
      field("max_epochs", &RunConfig::max_epochs),
      field("batch_size", &RunConfig::batch_size),
      field("crm_weight", &RunConfig::crm_weight),
      field("seed", &RunConfig::seed),
      field("ssa", &RunConfig::ssa),
      field("crm", &RunConfig::crm),
      field("qep", &RunConfig::qep),
      field("mode", &RunConfig::mode),
      field("level_focus", &RunConfig::level_focus),
      field("first_stage", &RunConfig::first_stage),
      field("reranker", &RunConfig::reranker),
      field("cutoffs", &RunConfig::cutoffs),
      field("missing_queries", &RunConfig::missing_queries),
      field("workers", &RunConfig::workers),
  };
  return fields;
}

inline const ConfigField* find_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (key == f.key) return &f;
  return nullptr;
}

}  // namespace detail

/// Sets one key. `source` is recorded; unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                             const std::string& source, const fs::path& base_dir = {}) {
  const auto* f = detail::find_field(key);
  if (!f) {
    const std::string msg = "unknown config key '" + key + "'";
    if (source == "flag") throw UsageError(msg);
    throw InputError(msg);
  }
  std::string v = value;
  if (f->is_path && !v.empty() && !base_dir.empty() && fs::path(v).is_relative()) v = (base_dir / v).string();
  f->set(cfg, v);
  cfg.sources[key] = source;
  Log::event("config", "set", {{"key", key}, {"value", v}, {"source", source}});
}

/// Flat "key = value" text; '#' starts a comment. Relative paths resolve
/// against the config file's directory.
inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source_name,
                              const fs::path& base_dir) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    std::string_view body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw InputError(source_name + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    try {
      set_config_value(cfg, key, value, "config", base_dir);
    } catch (const Error& e) {
      throw InputError(source_name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  auto in = open_input(path);
  apply_config_text(cfg, in, path, fs::absolute(path).parent_path());
  return cfg;
}

/// Every key with its resolved value and winning source, in a fixed order.
inline void write_resolved_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& f : detail::config_fields()) {
    auto it = cfg.sources.find(f.key);
    out << f.key << " = " << f.get(cfg) << "  # " << (it == cfg.sources.end() ? "default" : it->second) << '\n';
  }
}

inline std::string sha256_file(const std::string& path) {
  auto in = open_input(path, true);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw RuntimeFailure("sha256: init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifact names inside output_dir.

struct RunLayout {
  static constexpr const char* resolved_config = "config.resolved";
  static constexpr const char* manifest = "manifest.json";
  static constexpr const char* silver_labels = "silver_labels.jsonl";
  static constexpr const char* checkpoint = "checkpoint.bin";
  static constexpr const char* loss_trace = "loss_trace.tsv";
  static constexpr const char* doc_relevance = "relevance_docs.bin";
  static constexpr const char* query_relevance = "relevance_queries.bin";
  static constexpr const char* indicators = "indicators.bin";
  static constexpr const char* run_ssa = "run_ssa.trec";
  static constexpr const char* run_retrieval = "run_retrieval.trec";
  static constexpr const char* run_rerank = "run_rerank.trec";
  static constexpr const char* enriched_queries = "queries_enriched.jsonl";
  static constexpr const char* report = "report.tsv";
};

/// Lazily loaded inputs shared by the stages of one run.
class Workspace {
 public:
  explicit Workspace(RunConfig cfg) : cfg_(std::move(cfg)) {}

  const RunConfig& config() const { return cfg_; }
  fs::path out(const char* name) const { return fs::path(cfg_.output_dir) / name; }

  const TopicTaxonomy& taxonomy() {
    if (!taxonomy_) taxonomy_ = load_taxonomy(require("taxonomy", cfg_.taxonomy));
    return *taxonomy_;
  }

  const Corpus& corpus() {
    if (!corpus_) {
      std::vector<std::string> vocab;
      for (const auto& c : taxonomy().classes()) vocab.insert(vocab.end(), c.phrases.begin(), c.phrases.end());
      corpus_ = load_corpus(require("corpus", cfg_.corpus), PhraseMatcher(vocab));
    }
    return *corpus_;
  }

  const EmbeddingStore& store() {
    if (!store_) {
      EmbeddingStore s;
      load_embeddings(s, require("doc_embeddings", cfg_.doc_embeddings), Namespace::doc);
      load_embeddings(s, require("phrase_embeddings", cfg_.phrase_embeddings), Namespace::phrase);
      if (!cfg_.class_embeddings.empty()) {
        load_embeddings(s, require("class_embeddings", cfg_.class_embeddings), Namespace::class_name);
      }
      if (!cfg_.query_embeddings.empty()) {
        load_embeddings(s, require("query_embeddings", cfg_.query_embeddings), Namespace::query);
      }
      store_ = std::move(s);
    }
    return *store_;
  }

  const std::vector<Query>& queries() {
    if (!queries_) queries_ = load_queries(require("queries", cfg_.queries));
    return *queries_;
  }

  const Qrels& qrels() {
    if (!qrels_) qrels_ = load_qrels(require("qrels", cfg_.qrels));
    return *qrels_;
  }

  std::vector<std::string> doc_ids() {
    std::vector<std::string> ids;
    for (const auto& d : corpus().docs) ids.push_back(d.id);
    return ids;
  }

  std::vector<std::string> query_ids() {
    std::vector<std::string> ids;
    for (const auto& q : queries()) ids.push_back(q.id);
    return ids;
  }

  /// Returns `path` after checking it names an existing file.
  static std::string require(const char* key, const std::string& path) {
    if (path.empty()) throw InputError("config key '" + std::string(key) + "' is not set");
    if (!fs::exists(path)) throw InputError(std::string(key) + ": no such file '" + path + "'");
    return path;
  }

 private:
  RunConfig cfg_;
  std::optional<TopicTaxonomy> taxonomy_;
  std::optional<Corpus> corpus_;
  std::optional<EmbeddingStore> store_;
  std::optional<std::vector<Query>> queries_;
  std::optional<Qrels> qrels_;
};

namespace detail {

/// Runs `fn`, prefixing any error with the stage name.
template <typename Fn>
auto staged(const char* stage, Fn&& fn) {
  StageTimer timer(stage);
  try {
    return fn();
  } catch (const Error& e) {
    const std::string msg = std::string("[") + stage + "] " + e.what();
    switch (e.kind()) {
      case ErrorKind::usage: throw UsageError(msg);
      case ErrorKind::input: throw InputError(msg);
      default: throw RuntimeFailure(msg);
    }
  } catch (const std::exception& e) {
    throw RuntimeFailure(std::string("[") + stage + "] " + e.what());
  }
}

}  // namespace detail

/// Resolved config plus a digest of every configured input file.
inline void write_manifest(Workspace& ws) {
  ordered_json m;
  ordered_json config = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  for (const auto& f : detail::config_fields()) {
    const auto value = f.get(ws.config());
    config[f.key] = value;
    if (f.is_path && std::string_view(f.key) != "output_dir" && !value.empty() && fs::exists(value)) {
      inputs[f.key] = {{"path", value}, {"sha256", sha256_file(value)}};
    }
  }
  m["config"] = config;
  m["inputs"] = inputs;
  auto out = open_output(ws.out(RunLayout::manifest).string());
  out << m.dump(2) << '\n';
}

/// Creates output_dir and writes the resolved config and manifest into it.
inline void prepare_output(Workspace& ws) {
  fs::create_directories(ws.config().output_dir);
  {
    auto out = open_output(ws.out(RunLayout::resolved_config).string());
    write_resolved_config(out, ws.config());
  }
  write_manifest(ws);
}

inline SilverLabels stage_labels(Workspace& ws) {
  return detail::staged("labels", [&] {
    const auto& cfg = ws.config();
    auto labels = generate_silver_labels(ws.corpus(), ws.taxonomy(), ws.corpus().stats, ws.store(), cfg.rho, cfg.workers);
    save_silver_labels(labels, ws.taxonomy(), ws.out(RunLayout::silver_labels).string());
    std::size_t positives = 0;
    for (const auto& p : labels.positives) positives += p.size();
    Log::event("labels", "silver labels written",
               {{"documents", labels.positives.size()},
                {"mean_positives", static_cast<double>(positives) / static_cast<double>(labels.positives.size())},
                {"phrase_coverage", phrase_coverage(ws.taxonomy(), ws.store())}});
    return labels;
  });
}

inline TrainResult stage_train(Workspace& ws) {
  return detail::staged("train", [&] {
    const auto labels = load_silver_labels(ws.out(RunLayout::silver_labels).string(), ws.taxonomy());
    auto result = train(ws.corpus(), ws.taxonomy(), labels, ws.store(), ws.config().train_config());
    save_checkpoint(result.params, ws.out(RunLayout::checkpoint).string());
    auto out = open_output(ws.out(RunLayout::loss_trace).string());
    write_loss_trace(out, result.trace);
    return result;
  });
}

inline void stage_export(Workspace& ws) {
  detail::staged("export", [&] {
    const auto params = load_checkpoint(ws.out(RunLayout::checkpoint).string());
    const auto& tax = ws.taxonomy();
    const auto doc_ids = ws.doc_ids();
    const auto docs = export_relevance(params, tax, ws.store(), doc_ids, Namespace::doc);
    save_relevance(docs, ws.out(RunLayout::doc_relevance).string());
    std::vector<IndicatorVector> bits;
    for (std::size_t i = 0; i < doc_ids.size(); ++i) bits.push_back(relevance_indicator(docs.row(i), tax, ws.config().m));
    save_indicator_index(doc_ids, bits, tax.size(), ws.out(RunLayout::indicators).string());
    if (!ws.config().queries.empty()) {
      const auto qids = ws.query_ids();
      save_relevance(export_relevance(params, tax, ws.store(), qids, Namespace::query),
                     ws.out(RunLayout::query_relevance).string());
    }
    return 0;
  });
}

struct SearchOutput {
  std::vector<RankedList> ssa, retrieval, rerank;
  std::vector<EnrichedQuery> enriched;
};

inline ScorerBinding make_binding(Workspace& ws) {
  const auto& cfg = ws.config();
  ScorerBinding b;
  if (cfg.first_stage == "embedding_inner_product") {
    b.first_stage = std::make_shared<EmbeddingScorer>(ws.store(), EmbeddingScorer::Kind::inner_product);
  } else if (cfg.first_stage == "embedding_cosine") {
    b.first_stage = std::make_shared<EmbeddingScorer>(ws.store(), EmbeddingScorer::Kind::cosine);
  } else if (cfg.first_stage == "external_score_file") {
    b.first_stage = std::make_shared<ExternalScores>(
        ExternalScores::load(Workspace::require("first_stage_scores", cfg.first_stage_scores)));
  } else {
    throw UsageError("unknown first_stage source '" + cfg.first_stage + "'");
  }
  if (cfg.reranker == "phrase_composed") {
    b.reranker = std::make_shared<PhraseComposedReranker>(ws.store());
  } else if (cfg.reranker == "external_score_file") {
    b.reranker = std::make_shared<ExternalScores>(
        ExternalScores::load(Workspace::require("reranker_scores", cfg.reranker_scores)));
  } else {
    throw UsageError("unknown reranker source '" + cfg.reranker + "'");
  }
  return b;
}

inline SearchOutput stage_search(Workspace& ws) {
  return detail::staged("search", [&] {
    const auto& cfg = ws.config();
    const auto& tax = ws.taxonomy();
    const auto& corpus = ws.corpus();
    const auto doc_ids = ws.doc_ids();
    const auto focus = parse_level_focus(cfg.level_focus);
    const auto binding = make_binding(ws);

    const auto doc_rel = load_relevance(ws.out(RunLayout::doc_relevance).string());
    if (doc_rel.ids != doc_ids) throw InputError("document relevance export does not match the corpus");
    auto bit_in = open_input(ws.out(RunLayout::indicators).string(), true);
    auto [bit_ids, raw_bits] = read_indicator_index(bit_in, RunLayout::indicators);
    if (bit_ids != doc_ids) throw InputError("indicator index does not match the corpus");
    std::vector<IndicatorVector> doc_bits;
    for (auto& b : raw_bits) doc_bits.push_back(apply_level_focus(std::move(b), tax, focus));

    const auto query_rel = load_relevance(ws.out(RunLayout::query_relevance).string());
    const auto& queries = ws.queries();
    if (query_rel.ids.size() != queries.size()) throw InputError("query relevance export does not match the queries");

    std::vector<std::size_t> all_docs(doc_ids.size());
    std::iota(all_docs.begin(), all_docs.end(), 0);

    SearchOutput out;
    out.ssa.resize(queries.size());
    out.retrieval.resize(queries.size());
    out.rerank.resize(queries.size());
    out.enriched.resize(queries.size());
    auto& enriched = out.enriched;
    parallel_for(queries.size(), cfg.workers, [&](std::size_t qi) {
      const auto& q = queries[qi];
      const auto yq = query_rel.row(qi);
      const auto bq = apply_level_focus(relevance_indicator(yq, tax, cfg.m), tax, focus);

      std::vector<std::size_t> space = all_docs;
      if (cfg.ssa) {
        const auto s = ssa(bq, doc_bits, doc_ids, cfg.ssa_size);
        space = s.docs;
        RankedList list{q.id, {}, Stage::ssa};
        for (std::size_t i = 0; i < s.docs.size(); ++i) {
          list.entries.push_back({doc_ids[s.docs[i]], static_cast<double>(s.overlaps[i])});
        }
        out.ssa[qi] = std::move(list);
      }
      std::optional<CrmInputs> crm;
      if (cfg.crm) crm = CrmInputs{yq, &bq, &doc_rel, &doc_bits, cfg.crm_weight};
      out.retrieval[qi] = retrieve(q.id, space, cfg.retrieve_depth, doc_ids, *binding.first_stage, crm);

      std::vector<std::string> phrases;
      if (cfg.qep) {
        std::vector<const Document*> top;
        for (std::size_t i = 0; i < std::min(cfg.qep_top_docs, out.retrieval[qi].entries.size()); ++i) {
          top.push_back(&corpus.docs[*corpus.find(out.retrieval[qi].entries[i].doc)]);
        }
        if (!top.empty()) phrases = qep_phrases(bq, tax, top, cfg.k, corpus.stats);
      }
      enriched[qi] = enrich_query(q.text, phrases);
      out.rerank[qi] = rerank(enriched[qi], q.id, out.retrieval[qi].truncated(cfg.rerank_depth), *binding.reranker);
    });

    if (cfg.ssa) save_run(out.ssa, "toter-ssa", ws.out(RunLayout::run_ssa).string());
    save_run(out.retrieval, "toter-retrieval", ws.out(RunLayout::run_retrieval).string());
    save_run(out.rerank, "toter-rerank", ws.out(RunLayout::run_rerank).string());
    auto eq_out = open_output(ws.out(RunLayout::enriched_queries).string());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      ordered_json rec;
      rec["id"] = queries[qi].id;
      rec["original"] = enriched[qi].original;
      rec["core_phrases"] = enriched[qi].core_phrases;
      rec["rendered"] = enriched[qi].rendered;
      eq_out << rec.dump() << '\n';
    }
    return out;
  });
}

struct EvalOutput {
  MetricReport retrieval;
  MetricReport rerank;
};

inline MissingQueries parse_missing_mode(const std::string& s) {
  if (s == "zero") return MissingQueries::zero;
  if (s == "skip") return MissingQueries::skip;
  throw UsageError("missing_queries must be zero|skip");
}

inline EvalOutput stage_eval(Workspace& ws) {
  return detail::staged("eval", [&] {
    const auto& cfg = ws.config();
    const auto cutoffs = parse_cutoffs(cfg.cutoffs);
    const auto mode = parse_missing_mode(cfg.missing_queries);
    EvalOutput e;
    e.retrieval = evaluate(load_run(ws.out(RunLayout::run_retrieval).string()), ws.qrels(), cutoffs, mode);
    e.rerank = evaluate(load_run(ws.out(RunLayout::run_rerank).string()), ws.qrels(), cutoffs, mode);
    auto out = open_output(ws.out(RunLayout::report).string());
    std::ostringstream tmp;
    write_report(tmp, e.retrieval, "retrieval");
    out << tmp.str();
    std::ostringstream tmp2;
    write_report(tmp2, e.rerank, "rerank");
    const auto body = tmp2.str();
    out << body.substr(body.find('\n') + 1);  // single header row
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      Log::event("eval", "mean", {{"cutoff", cutoffs[c]},
                                  {"recall_retrieval", e.retrieval.means[e.retrieval.slot(Metric::recall, c)]},
                                  {"ndcg_rerank", e.rerank.means[e.rerank.slot(Metric::ndcg, c)]}});
    }
    return e;
  });
}

struct PipelineResult {
  TrainResult training;
  SearchOutput search;
  EvalOutput eval;
};

inline PipelineResult run_pipeline(const RunConfig& cfg) {
  Workspace ws(cfg);
  detail::staged("setup", [&] {
    prepare_output(ws);
    return 0;
  });
  PipelineResult r;
  stage_labels(ws);
  r.training = stage_train(ws);
  stage_export(ws);
  r.search = stage_search(ws);
  r.eval = stage_eval(ws);
  return r;
}

// ---------------------------------------------------------------------------
// Taxonomy-quality sweep: rerun the pipeline on perturbed taxonomies.

struct PerturbationSpec {
  std::string kind;  // none | prune | shuffle
  double ratio = 0.0;
  int level = 0;
};

struct RobustnessRow {
  PerturbationSpec spec;
  double achieved_ratio = 0.0;
  std::size_t classes = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

/// Prune at each ratio in `prune_ratios`, shuffle every level >= 2 at
/// `shuffle_ratio`, plus the unperturbed reference; writes robustness.tsv.
inline std::vector<RobustnessRow> run_robustness(const RunConfig& base, const std::vector<double>& prune_ratios,
                                                 double shuffle_ratio, std::size_t cutoff) {
  const fs::path root = fs::path(base.output_dir) / "robustness";
  fs::create_directories(root);
  const auto original = load_taxonomy(Workspace::require("taxonomy", base.taxonomy));

  std::vector<PerturbationSpec> specs{{"none", 0.0, 0}};
  for (double r : prune_ratios) specs.push_back({"prune", r, 0});
  for (int level = 2; level <= original.depth(); ++level) specs.push_back({"shuffle", shuffle_ratio, level});

  std::vector<RobustnessRow> rows;
  for (const auto& spec : specs) {
    RobustnessRow row{spec};
    std::string name = spec.kind;
    TopicTaxonomy tax = original;
    if (spec.kind == "prune") {
      auto res = prune_random(original, spec.ratio, base.seed);
      row.achieved_ratio = res.achieved_ratio;
      tax = std::move(res.taxonomy);
      name += "_" + format_fixed(spec.ratio, 2);
    } else if (spec.kind == "shuffle") {
      auto res = shuffle_level(original, spec.ratio, base.seed, spec.level);
      row.achieved_ratio = 2.0 * static_cast<double>(res.swapped.size()) /
                           static_cast<double>(original.level_members(spec.level).size());
      tax = std::move(res.taxonomy);
      name += "_" + format_fixed(spec.ratio, 2) + "_level" + std::to_string(spec.level);
    }
    const fs::path dir = root / name;
    fs::create_directories(dir);
    RunConfig cfg = base;
    cfg.output_dir = dir.string();
    cfg.taxonomy = (dir / "taxonomy.jsonl").string();
    save_taxonomy(tax, cfg.taxonomy);
    Log::event("robustness", "variant", {{"name", name}, {"classes", tax.size()}});
    const auto result = run_pipeline(cfg);
    row.classes = tax.size();
    row.recall = result.eval.retrieval.mean(Metric::recall, cutoff);
    row.ndcg = result.eval.retrieval.mean(Metric::ndcg, cutoff);
    rows.push_back(row);
  }
  auto out = open_output((root / "robustness.tsv").string());
  out << "perturbation\tratio\tlevel\tachieved_ratio\tclasses\trecall@" << cutoff << "\tndcg@" << cutoff << '\n';
  for (const auto& r : rows) {
    out << r.spec.kind << '\t' << format_fixed(r.spec.ratio, 2) << '\t' << r.spec.level << '\t'
        << format_fixed(r.achieved_ratio, 4) << '\t' << r.classes << '\t' << format_fixed(r.recall, 6) << '\t'
        << format_fixed(r.ndcg, 6) << '\n';
  }
  return rows;
}

}  // namespace toter
