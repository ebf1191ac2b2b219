#pragma once

// Class relevance estimator: a GCN encodes every taxonomy class from its
// class-name embedding, a bilinear form scores documents against classes
// (y_dj = sigmoid(c_j^T M h_d)), and training minimises summed binary
// cross-entropy, first against silver labels and then against collective
// labels averaged over each document's retrieved neighbours.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "toter/corpus.hpp"
#include "toter/relevance.hpp"
#include "toter/silver.hpp"
#include "toter/taxonomy.hpp"

namespace toter {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline constexpr double kProbabilityClamp = 1e-7;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// D^{-1/2} (A + I) D^{-1/2} over undirected taxonomy edges.
inline SparseMatrix normalized_adjacency(const TopicTaxonomy& tax) {
  const auto n = static_cast<Eigen::Index>(tax.size());
  std::vector<double> degree(tax.size(), 1.0);
  for (std::size_t i = 0; i < tax.size(); ++i) degree[i] += static_cast<double>(tax.neighbors(i).size());
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t i = 0; i < tax.size(); ++i) {
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0 / degree[i]);
    for (auto j : tax.neighbors(i)) {
      trip.emplace_back(static_cast<int>(i), static_cast<int>(j), 1.0 / std::sqrt(degree[i] * degree[j]));
    }
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

struct EstimatorParams {
  std::vector<Matrix> gcn_weights;  // layer l: in_dim x out_dim
  Matrix bilinear;                  // class_dim x doc_dim
  Matrix node_features;             // |C| x feat_dim, frozen

  std::size_t layer_count() const { return gcn_weights.size(); }
  Eigen::Index class_dim() const {
    return gcn_weights.empty() ? node_features.cols() : gcn_weights.back().cols();
  }
  Eigen::Index doc_dim() const { return bilinear.cols(); }

  /// Throws InputError unless the dimension chain and finiteness hold.
  void validate() const {
    Eigen::Index in = node_features.cols();
    for (std::size_t l = 0; l < gcn_weights.size(); ++l) {
      if (gcn_weights[l].rows() != in) {
        throw InputError("estimator: layer " + std::to_string(l) + " expects input dim " +
                         std::to_string(gcn_weights[l].rows()) + ", got " + std::to_string(in));
      }
      in = gcn_weights[l].cols();
    }
    if (bilinear.rows() != in) throw InputError("estimator: bilinear rows do not match class dim");
    auto finite = [](const Matrix& m) { return m.allFinite(); };
    if (!finite(bilinear) || !finite(node_features) || !std::all_of(gcn_weights.begin(), gcn_weights.end(), finite)) {
      throw RuntimeFailure("estimator: non-finite parameter");
    }
  }
};

/// Intermediate values of one GCN forward pass, kept for backpropagation.
struct GcnForward {
  std::vector<Matrix> inputs;      // H_0 .. H_L (H_0 = X, H_L = class matrix)
  std::vector<Matrix> propagated;  // A H_l
  std::vector<Matrix> preact;      // A H_l W_l
};

inline GcnForward gcn_forward(const EstimatorParams& params, const SparseMatrix& adjacency) {
  if (adjacency.rows() != params.node_features.rows()) {
    throw InputError("gcn: adjacency has " + std::to_string(adjacency.rows()) + " nodes, features have " +
                     std::to_string(params.node_features.rows()));
  }
  GcnForward f;
  f.inputs.push_back(params.node_features);
  const std::size_t layers = params.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    if (params.gcn_weights[l].rows() != f.inputs.back().cols()) throw InputError("gcn: dimension mismatch");
    Matrix ah = adjacency * f.inputs.back();
    Matrix z = ah * params.gcn_weights[l];
    f.propagated.push_back(std::move(ah));
    Matrix h = l + 1 < layers ? Matrix(z.cwiseMax(0.0)) : z;
    f.preact.push_back(std::move(z));
    f.inputs.push_back(std::move(h));
  }
  return f;
}

/// Rows are the class representations c_j.
inline Matrix gcn_class_embeddings(const EstimatorParams& params, const SparseMatrix& adjacency) {
  return gcn_forward(params, adjacency).inputs.back();
}

inline Matrix gcn_class_embeddings(const EstimatorParams& params, const TopicTaxonomy& tax) {
  return gcn_class_embeddings(params, normalized_adjacency(tax));
}

/// Bilinear logits c_j^T M h_d for a batch of documents (rows of `docs`).
inline Matrix relevance_logits(const EstimatorParams& params, const Matrix& class_matrix, const Matrix& docs) {
  if (docs.cols() != params.doc_dim()) throw InputError("predict: document dim mismatch");
  if (class_matrix.cols() != params.bilinear.rows()) throw InputError("predict: class dim mismatch");
  return docs * (class_matrix * params.bilinear).transpose();
}

inline Matrix relevance_probabilities(const EstimatorParams& params, const Matrix& class_matrix, const Matrix& docs) {
  Matrix p = relevance_logits(params, class_matrix, docs).unaryExpr([](double z) { return sigmoid(z); });
  if (!p.allFinite()) throw RuntimeFailure("predict: non-finite relevance (training diverged?)");
  return p;
}

struct ClassRelevance {
  std::string doc;
  std::vector<double> scores;  // in (0, 1)
};

inline ClassRelevance predict_relevance(const EstimatorParams& params, std::span<const double> doc_vec,
                                        const Matrix& class_matrix, std::string doc_id = {}) {
  Matrix h(1, static_cast<Eigen::Index>(doc_vec.size()));
  for (std::size_t i = 0; i < doc_vec.size(); ++i) h(0, static_cast<Eigen::Index>(i)) = doc_vec[i];
  const Matrix p = relevance_probabilities(params, class_matrix, h);
  ClassRelevance out{std::move(doc_id), std::vector<double>(p.data(), p.data() + p.size())};
  return out;
}

/// -sum_j [y_j log p_j + (1 - y_j) log(1 - p_j)], with p clamped to [1e-7, 1 - 1e-7].
inline double bce_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) {
    throw InputError("bce_loss: length mismatch " + std::to_string(predicted.size()) + " vs " +
                     std::to_string(target.size()));
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    const double p = std::clamp(predicted[j], kProbabilityClamp, 1.0 - kProbabilityClamp);
    loss -= target[j] * std::log(p) + (1.0 - target[j]) * std::log(1.0 - p);
  }
  return loss;
}

/// Summed loss over a batch whose rows align with `targets`.
inline double batch_loss(const Matrix& probabilities, const Matrix& targets) {
  if (probabilities.rows() != targets.rows() || probabilities.cols() != targets.cols()) {
    throw InputError("bce_loss: batch shape mismatch");
  }
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
      const double p = std::clamp(probabilities(i, j), kProbabilityClamp, 1.0 - kProbabilityClamp);
      const double y = targets(i, j);
      loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
  }
  return loss;
}

struct Gradients {
  std::vector<Matrix> gcn_weights;
  Matrix bilinear;
  double loss = 0.0;
};

/// Analytic gradients of the summed BCE over a batch (rows of `docs`,
/// targets aligned) with respect to M and every GCN weight matrix.
inline Gradients loss_gradients(const EstimatorParams& params, const SparseMatrix& adjacency, const Matrix& docs,
                                const Matrix& targets) {
  const auto fwd = gcn_forward(params, adjacency);
  const Matrix& classes = fwd.inputs.back();
  const Matrix probs = relevance_probabilities(params, classes, docs);
  if (targets.rows() != probs.rows() || targets.cols() != probs.cols()) {
    throw InputError("loss_gradients: target shape mismatch");
  }
  Gradients g;
  g.loss = batch_loss(probs, targets);

  const Matrix dlogits = probs - targets;                // N x |C|
  const Matrix doc_proj = docs * params.bilinear.transpose();  // N x class_dim, rows M h_d
  g.bilinear = classes.transpose() * dlogits.transpose() * docs;
  Matrix dh = dlogits.transpose() * doc_proj;            // dL/dC, |C| x class_dim

  const std::size_t layers = params.layer_count();
  g.gcn_weights.resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    Matrix dz = dh;
    if (l + 1 < layers) dz = dz.cwiseProduct((fwd.preact[l].array() > 0.0).cast<double>().matrix());
    g.gcn_weights[l] = fwd.propagated[l].transpose() * dz;
    if (l > 0) dh = adjacency.transpose() * (dz * params.gcn_weights[l].transpose());
  }
  return g;
}

/// Entrywise mean of the neighbours' relevance vectors.
inline std::vector<double> collective_labels(std::span<const std::vector<double>> neighbors) {
  if (neighbors.empty()) throw InputError("collective_labels: empty neighbour set");
  const std::size_t n = neighbors.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& v : neighbors) {
    if (v.size() != n) throw InputError("collective_labels: length mismatch");
    for (std::size_t j = 0; j < n; ++j) mean[j] += v[j];
  }
  for (auto& x : mean) x /= static_cast<double>(neighbors.size());
  return mean;
}

// ---------------------------------------------------------------------------
// Training.

enum class TrainMode { silver_only, self_training, ckd };

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "ckd") return TrainMode::ckd;
  if (s == "self_training") return TrainMode::self_training;
  if (s == "silver_only") return TrainMode::silver_only;
  throw UsageError("unknown training mode '" + std::string(s) + "' (expected ckd|self_training|silver_only)");
}

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::silver_only: return "silver_only";
    case TrainMode::self_training: return "self_training";
    default: return "ckd";
  }
}

struct TrainConfig {
  std::size_t warmup_epochs = 50;
  std::size_t max_epochs = 200;  // total epochs, warm-up included
  double learning_rate = 1e-2;
  std::size_t update_period = 25;
  std::size_t neighbor_count = 10;
  std::size_t layer_count = 2;
  std::size_t hidden_dim = 0;  // 0: document embedding dim
  std::size_t batch_size = 0;  // 0: full batch
  double retention_percent = kDefaultRetentionPercent;
  double crm_weight = 1.0;
  std::uint64_t seed = 42;
  TrainMode mode = TrainMode::ckd;
  std::size_t workers = 1;

  void validate() const {
    if (update_period < 1) throw UsageError("train: update period must be >= 1");
    if (neighbor_count < 1) throw UsageError("train: neighbour count must be >= 1");
    if (warmup_epochs > max_epochs) throw UsageError("train: warm-up exceeds max epochs");
    if (!(learning_rate > 0.0)) throw UsageError("train: learning rate must be positive");
  }
};

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  std::string phase;      // warmup | silver | self_training | ckd
  double loss = 0.0;
};

struct TrainResult {
  EstimatorParams params;
  std::vector<LossRecord> trace;
};

/// Row-stacks the document embeddings (namespace `ns`) in the given order.
inline Matrix embedding_matrix(const EmbeddingStore& store, Namespace ns, std::span<const std::string> ids) {
  Matrix m(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(store.dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto v = store.get(ns, ids[i]);
    for (std::size_t k = 0; k < v.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
  }
  return m;
}

/// Class-name features: the class_name vector keyed by class id, falling
/// back to the phrase vector of the class name.
inline Matrix class_feature_matrix(const TopicTaxonomy& tax, const EmbeddingStore& store) {
  Matrix x(static_cast<Eigen::Index>(tax.size()), static_cast<Eigen::Index>(store.dim()));
  for (std::size_t j = 0; j < tax.size(); ++j) {
    auto v = store.find(Namespace::class_name, tax.at(j).id);
    if (!v) v = store.find(Namespace::phrase, tax.at(j).name);
    if (!v) throw InputError("missing class_name embedding for class '" + tax.at(j).id + "'");
    for (std::size_t k = 0; k < v->size(); ++k) x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = (*v)[k];
  }
  return x;
}

/// Glorot-uniform weights drawn in row-major order from one seeded stream.
inline EstimatorParams init_params(Matrix node_features, std::size_t doc_dim, std::size_t layer_count,
                                   std::size_t hidden_dim, std::uint64_t seed) {
  EstimatorParams p;
  p.node_features = std::move(node_features);
  Rng rng(seed);
  auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
    return m;
  };
  Eigen::Index in = p.node_features.cols();
  const auto hidden = static_cast<Eigen::Index>(hidden_dim == 0 ? doc_dim : hidden_dim);
  for (std::size_t l = 0; l < layer_count; ++l) {
    p.gcn_weights.push_back(glorot(in, hidden));
    in = hidden;
  }
  p.bilinear = glorot(in, static_cast<Eigen::Index>(doc_dim));
  return p;
}

/// Top-`count` neighbours of each document (itself excluded) under
/// z(cosine) + w * z(CRM), with ties broken by document id.
inline std::vector<std::vector<std::size_t>> retrieve_neighbors(const Matrix& doc_embeddings,
                                                                const Matrix& relevance,
                                                                const std::vector<IndicatorVector>& indicators,
                                                                std::span<const std::string> doc_ids,
                                                                std::size_t count, double crm_weight,
                                                                std::size_t workers) {
  const Eigen::Index n = doc_embeddings.rows();
  Matrix unit = doc_embeddings;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0.0) unit.row(i) /= norm;
  }
  Matrix masked = relevance;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < masked.cols(); ++j) {
      if (!indicators[static_cast<std::size_t>(i)].test(static_cast<std::size_t>(j))) masked(i, j) = 0.0;
    }
  }
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t d) {
    const auto di = static_cast<Eigen::Index>(d);
    const Vector de_all = unit * unit.row(di).transpose();
    const Vector crm_all = masked * masked.row(di).transpose();
    std::vector<double> de, crm;
    std::vector<std::size_t> cand;
    de.reserve(static_cast<std::size_t>(n));
    crm.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == di) continue;
      cand.push_back(static_cast<std::size_t>(i));
      de.push_back(de_all(i));
      crm.push_back(crm_all(i));
    }
    const auto score = combine(de, crm, crm_weight);
    std::vector<std::size_t> order(cand.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min(count, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (score[a] != score[b]) return score[a] > score[b];
                        return doc_ids[cand[a]] < doc_ids[cand[b]];
                      });
    out[d].reserve(k);
    for (std::size_t i = 0; i < k; ++i) out[d].push_back(cand[order[i]]);
  });
  return out;
}

namespace detail {

inline Matrix silver_target_matrix(const SilverLabels& silver) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(silver.positives.size()),
                          static_cast<Eigen::Index>(silver.n_classes));
  for (std::size_t d = 0; d < silver.positives.size(); ++d) {
    for (auto j : silver.positives[d]) y(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = 1.0;
  }
  return y;
}

inline std::vector<IndicatorVector> indicators_for(const Matrix& relevance, const TopicTaxonomy& tax, double m) {
  std::vector<IndicatorVector> out;
  out.reserve(static_cast<std::size_t>(relevance.rows()));
  std::vector<double> row(static_cast<std::size_t>(relevance.cols()));
  for (Eigen::Index i = 0; i < relevance.rows(); ++i) {
    for (Eigen::Index j = 0; j < relevance.cols(); ++j) row[static_cast<std::size_t>(j)] = relevance(i, j);
    out.push_back(relevance_indicator(row, tax, m));
  }
  return out;
}

}  // namespace detail

/// Collective labels for every document: mean predicted relevance of its
/// CRM-retrieved neighbours.
inline Matrix collective_targets(const EstimatorParams& params, const TopicTaxonomy& tax, const SparseMatrix& adjacency,
                                 const Matrix& docs, std::span<const std::string> doc_ids, const TrainConfig& cfg) {
  const Matrix relevance = relevance_probabilities(params, gcn_class_embeddings(params, adjacency), docs);
  const auto indicators = detail::indicators_for(relevance, tax, cfg.retention_percent);
  const auto neighbors =
      retrieve_neighbors(docs, relevance, indicators, doc_ids, cfg.neighbor_count, cfg.crm_weight, cfg.workers);
  Matrix targets(relevance.rows(), relevance.cols());
  std::vector<std::vector<double>> rows;
  for (std::size_t d = 0; d < neighbors.size(); ++d) {
    rows.clear();
    for (auto nb : neighbors[d]) {
      const auto r = relevance.row(static_cast<Eigen::Index>(nb));
      rows.emplace_back(static_cast<std::size_t>(r.size()));
      for (Eigen::Index j = 0; j < r.size(); ++j) rows.back()[static_cast<std::size_t>(j)] = r(j);
    }
    const auto mean = collective_labels(rows);
    for (std::size_t j = 0; j < mean.size(); ++j) {
      targets(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = mean[j];
    }
  }
  return targets;
}

/// Hard self-predictions 1[y >= 0.5] united with the silver labels.
inline Matrix self_training_targets(const EstimatorParams& params, const SparseMatrix& adjacency, const Matrix& docs,
                                    const Matrix& silver) {
  const Matrix relevance = relevance_probabilities(params, gcn_class_embeddings(params, adjacency), docs);
  Matrix y = silver;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      if (relevance(i, j) >= 0.5) y(i, j) = 1.0;
  return y;
}

/// Warm-up on silver labels, then (per mode) distillation epochs whose
/// targets refresh every `update_period` epochs. Updates are plain gradient
/// descent on the per-document mean of the summed loss.
inline TrainResult train(const Corpus& corpus, const TopicTaxonomy& tax, const SilverLabels& silver_in,
                         const EmbeddingStore& store, const TrainConfig& cfg) {
  cfg.validate();
  const SilverLabels silver = align_to_corpus(silver_in, corpus);
  if (silver.n_classes != tax.size()) throw InputError("train: silver labels do not match the taxonomy");

  std::vector<std::string> doc_ids;
  for (const auto& d : corpus.docs) doc_ids.push_back(d.id);
  const Matrix docs = embedding_matrix(store, Namespace::doc, doc_ids);
  const SparseMatrix adjacency = normalized_adjacency(tax);
  const Matrix silver_y = detail::silver_target_matrix(silver);

  TrainResult result;
  result.params = init_params(class_feature_matrix(tax, store), store.dim(), cfg.layer_count, cfg.hidden_dim, cfg.seed);
  auto& params = result.params;

  Rng batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(doc_ids.size());
  std::iota(order.begin(), order.end(), 0);

  auto step = [&](const Matrix& targets) -> double {
    const std::size_t n = order.size();
    const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    if (bs == n) {
      const auto g = loss_gradients(params, adjacency, docs, targets);
      const double scale = cfg.learning_rate / static_cast<double>(n);
      params.bilinear -= scale * g.bilinear;
      for (std::size_t l = 0; l < params.gcn_weights.size(); ++l) params.gcn_weights[l] -= scale * g.gcn_weights[l];
      return g.loss;
    }
    batch_rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      Matrix xb(static_cast<Eigen::Index>(len), docs.cols());
      Matrix yb(static_cast<Eigen::Index>(len), targets.cols());
      for (std::size_t i = 0; i < len; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = docs.row(static_cast<Eigen::Index>(order[start + i]));
        yb.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(order[start + i]));
      }
      const auto g = loss_gradients(params, adjacency, xb, yb);
      const double scale = cfg.learning_rate / static_cast<double>(len);
      params.bilinear -= scale * g.bilinear;
      for (std::size_t l = 0; l < params.gcn_weights.size(); ++l) params.gcn_weights[l] -= scale * g.gcn_weights[l];
      total += g.loss;
    }
    return total;
  };

  Matrix targets = silver_y;
  std::string phase = "warmup";
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (epoch > cfg.warmup_epochs) {
      const std::size_t since = epoch - cfg.warmup_epochs - 1;
      if (cfg.mode == TrainMode::silver_only) {
        phase = "silver";
      } else if (since % cfg.update_period == 0) {
        if (cfg.mode == TrainMode::ckd) {
          targets = collective_targets(params, tax, adjacency, docs, doc_ids, cfg);
          phase = "ckd";
        } else {
          targets = self_training_targets(params, adjacency, docs, silver_y);
          phase = "self_training";
        }
        Log::event("train", "targets refreshed", {{"epoch", epoch}, {"mode", to_string(cfg.mode)}});
      }
    }
    const double loss = step(targets);
    if (!std::isfinite(loss) || !params.bilinear.allFinite()) {
      throw RuntimeFailure("train: divergence (non-finite loss) at epoch " + std::to_string(epoch));
    }
    result.trace.push_back({epoch, phase, loss});
    if (epoch == 1 || epoch % 25 == 0 || epoch == cfg.max_epochs) {
      Log::event("train", "epoch", {{"epoch", epoch}, {"phase", phase}, {"loss", loss}});
    }
  }
  return result;
}

inline void write_loss_trace(std::ostream& out, const std::vector<LossRecord>& trace) {
  out << "epoch\tphase\tloss\n";
  for (const auto& r : trace) out << r.epoch << '\t' << r.phase << '\t' << format_double(r.loss) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoint: "TOTERCKP", version, L, |C|, feat_dim, out dim per layer,
// doc_dim (all u32), then X, W_0 .. W_{L-1}, M as row-major f64.

inline constexpr std::string_view kCheckpointMagic = "TOTERCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void write_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) binio::write_le<double>(out, m(r, c));
}
inline Matrix read_matrix(std::istream& in, std::uint32_t rows, std::uint32_t cols, const std::string& what) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = binio::read_le<double>(in, what);
  return m;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const EstimatorParams& p) {
  binio::write_magic(out, kCheckpointMagic);
  binio::write_le<std::uint32_t>(out, kCheckpointVersion);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.layer_count()));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.node_features.rows()));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.node_features.cols()));
  for (const auto& w : p.gcn_weights) binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.cols()));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.bilinear.cols()));
  detail::write_matrix(out, p.node_features);
  for (const auto& w : p.gcn_weights) detail::write_matrix(out, w);
  detail::write_matrix(out, p.bilinear);
}

inline void save_checkpoint(const EstimatorParams& p, const std::string& path) {
  auto out = open_output(path, true);
  write_checkpoint(out, p);
}

inline EstimatorParams read_checkpoint(std::istream& in, const std::string& source = "checkpoint") {
  binio::expect_magic(in, kCheckpointMagic, source);
  const auto version = binio::read_le<std::uint32_t>(in, source);
  if (version != kCheckpointVersion) throw InputError(source + ": unsupported version " + std::to_string(version));
  const auto layers = binio::read_le<std::uint32_t>(in, source);
  const auto n_classes = binio::read_le<std::uint32_t>(in, source);
  const auto feat = binio::read_le<std::uint32_t>(in, source);
  std::vector<std::uint32_t> outs(layers);
  for (auto& o : outs) o = binio::read_le<std::uint32_t>(in, source);
  const auto doc_dim = binio::read_le<std::uint32_t>(in, source);
  EstimatorParams p;
  p.node_features = detail::read_matrix(in, n_classes, feat, source);
  std::uint32_t prev = feat;
  for (auto o : outs) {
    p.gcn_weights.push_back(detail::read_matrix(in, prev, o, source));
    prev = o;
  }
  p.bilinear = detail::read_matrix(in, prev, doc_dim, source);
  p.validate();
  return p;
}

inline EstimatorParams load_checkpoint(const std::string& path) {
  auto in = open_input(path, true);
  return read_checkpoint(in, path);
}

// ---------------------------------------------------------------------------
// Relevance export: "TOTERREL", version, |C| (u32), count (u64), then per
// entity {u16 id length, id bytes, |C| f64}.

inline constexpr std::string_view kRelevanceMagic = "TOTERREL";
inline constexpr std::uint32_t kRelevanceVersion = 1;

struct RelevanceTable {
  std::vector<std::string> ids;
  Matrix scores;  // ids.size() x |C|

  std::vector<double> row(std::size_t i) const {
    std::vector<double> r(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index j = 0; j < scores.cols(); ++j) r[static_cast<std::size_t>(j)] = scores(static_cast<Eigen::Index>(i), j);
    return r;
  }
};

/// Batch prediction for every id of namespace `ns`, in the given order.
inline RelevanceTable export_relevance(const EstimatorParams& params, const TopicTaxonomy& tax,
                                       const EmbeddingStore& store, std::span<const std::string> ids,
                                       Namespace ns = Namespace::doc) {
  if (static_cast<std::size_t>(params.node_features.rows()) != tax.size()) {
    throw InputError("export: checkpoint has " + std::to_string(params.node_features.rows()) +
                     " classes, taxonomy has " + std::to_string(tax.size()));
  }
  RelevanceTable t;
  t.ids.assign(ids.begin(), ids.end());
  const Matrix classes = gcn_class_embeddings(params, normalized_adjacency(tax));
  t.scores = relevance_probabilities(params, classes, embedding_matrix(store, ns, ids));
  return t;
}

inline void write_relevance(std::ostream& out, const RelevanceTable& t) {
  binio::write_magic(out, kRelevanceMagic);
  binio::write_le<std::uint32_t>(out, kRelevanceVersion);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.scores.cols()));
  binio::write_le<std::uint64_t>(out, t.ids.size());
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    binio::write_id(out, t.ids[i]);
    for (Eigen::Index j = 0; j < t.scores.cols(); ++j) binio::write_le<double>(out, t.scores(static_cast<Eigen::Index>(i), j));
  }
}

inline void save_relevance(const RelevanceTable& t, const std::string& path) {
  auto out = open_output(path, true);
  write_relevance(out, t);
}

inline RelevanceTable read_relevance(std::istream& in, const std::string& source = "relevance") {
  binio::expect_magic(in, kRelevanceMagic, source);
  const auto version = binio::read_le<std::uint32_t>(in, source);
  if (version != kRelevanceVersion) throw InputError(source + ": unsupported version " + std::to_string(version));
  const auto dim = binio::read_le<std::uint32_t>(in, source);
  const auto count = binio::read_le<std::uint64_t>(in, source);
  RelevanceTable t;
  t.scores.resize(static_cast<Eigen::Index>(count), dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.ids.push_back(binio::read_id(in, source));
    for (std::uint32_t j = 0; j < dim; ++j) t.scores(static_cast<Eigen::Index>(i), j) = binio::read_le<double>(in, source);
  }
  return t;
}

inline RelevanceTable load_relevance(const std::string& path) {
  auto in = open_input(path, true);
  return read_relevance(in, path);
}

}  // namespace toter
