#pragma once

// Topical taxonomy: a tree of topic classes, each carrying a cluster of
// phrases. Classes are addressed by string id at the API boundary and by a
// dense index (sorted-id order) internally, so every matrix built from a
// taxonomy has a deterministic row order.

#include <algorithm>
#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "toter/util.hpp"

namespace toter {

inline constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);

/// One record of the taxonomy file before validation. `parents` is a list so
/// that DAG-shaped inputs can be parsed and rejected with a precise message.
struct ClassRecord {
  std::string id;
  std::string name;
  std::vector<std::string> parents;
  std::vector<std::string> phrases;
};

struct TopicClass {
  std::string id;
  std::string name;
  std::vector<std::string> phrases;   // P_j, de-duplicated, contains name
  std::size_t parent = kNoParent;     // dense index
  std::vector<std::size_t> children;  // dense indices, ascending
  int level = 0;
};

class TopicTaxonomy {
 public:
  TopicTaxonomy() = default;

  /// Validates records and builds the tree. Throws InputError naming the
  /// offending class on any violation.
  static TopicTaxonomy from_records(std::vector<ClassRecord> records) {
    if (records.empty()) throw InputError("taxonomy: no classes");
    std::sort(records.begin(), records.end(),
              [](const ClassRecord& a, const ClassRecord& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (records[i].id == records[i - 1].id) {
        throw InputError("taxonomy: duplicate class id '" + records[i].id + "'");
      }
    }

    TopicTaxonomy tax;
    tax.classes_.resize(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.id.empty()) throw InputError("taxonomy: empty class id");
      tax.index_.emplace(r.id, i);
    }

    std::size_t edges = 0;
    std::vector<std::size_t> roots;
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto& r = records[i];
      auto& c = tax.classes_[i];
      c.id = r.id;
      c.name = r.name.empty() && !r.phrases.empty() ? r.phrases.front() : r.name;
      if (r.phrases.empty()) throw InputError("taxonomy: class '" + r.id + "' has an empty phrase set");
      if (c.name.empty()) throw InputError("taxonomy: class '" + r.id + "' has an empty name");
      std::set<std::string> seen;
      if (std::find(r.phrases.begin(), r.phrases.end(), c.name) == r.phrases.end()) {
        c.phrases.push_back(c.name);
        seen.insert(c.name);
      }
      for (auto& p : r.phrases) {
        if (p.empty()) throw InputError("taxonomy: class '" + r.id + "' has an empty phrase");
        if (seen.insert(p).second) c.phrases.push_back(p);
      }
      edges += r.parents.size();
      if (r.parents.empty()) {
        roots.push_back(i);
        continue;
      }
      for (const auto& p : r.parents) {
        if (!tax.index_.count(p)) {
          throw InputError("taxonomy: class '" + r.id + "' references missing parent '" + p + "'");
        }
      }
    }
    if (edges > records.size() - 1 && !roots.empty()) {
      std::string offender;
      for (const auto& r : records) {
        if (r.parents.size() > 1) {
          offender = r.id;
          break;
        }
      }
      throw InputError("taxonomy: non-tree edge set: " + std::to_string(edges) + " edges for " +
                       std::to_string(records.size()) + " classes" +
                       (offender.empty() ? std::string() : " (class '" + offender + "' has multiple parents)"));
    }
    for (const auto& r : records) {
      if (r.parents.size() > 1) {
        throw InputError("taxonomy: non-tree edge set: class '" + r.id + "' has multiple parents");
      }
    }
    if (roots.empty()) throw InputError("taxonomy: no root class (cycle detected)");
    if (roots.size() > 1) {
      throw InputError("taxonomy: multiple roots: '" + records[roots[0]].id + "' and '" +
                       records[roots[1]].id + "'");
    }
    tax.root_ = roots.front();

    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].parents.empty()) continue;
      const std::size_t p = tax.index_.at(records[i].parents.front());
      if (p == i) throw InputError("taxonomy: cycle detected at class '" + records[i].id + "'");
      tax.classes_[i].parent = p;
      tax.classes_[p].children.push_back(i);
    }
    tax.finalize();
    return tax;
  }

  std::size_t size() const { return classes_.size(); }
  std::size_t root() const { return root_; }
  int depth() const { return depth_; }
  std::size_t edge_count() const { return classes_.empty() ? 0 : classes_.size() - 1; }

  const TopicClass& at(std::size_t i) const { return classes_.at(i); }
  const std::vector<TopicClass>& classes() const { return classes_; }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(std::string_view id) const {
    auto idx = find(id);
    if (!idx) throw InputError("taxonomy: unknown class id '" + std::string(id) + "'");
    return *idx;
  }

  /// Dense indices of classes at `level`, ascending.
  const std::vector<std::size_t>& level_members(int level) const {
    static const std::vector<std::size_t> empty;
    if (level < 0 || level > depth_) return empty;
    return by_level_[static_cast<std::size_t>(level)];
  }

  bool is_leaf(std::size_t i) const { return classes_.at(i).children.empty(); }

  /// Undirected neighbours (parent first, then children).
  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    const auto& c = classes_.at(i);
    if (c.parent != kNoParent) out.push_back(c.parent);
    out.insert(out.end(), c.children.begin(), c.children.end());
    return out;
  }

  /// Records in canonical (sorted-id) order, for saving or rebuilding.
  std::vector<ClassRecord> records() const {
    std::vector<ClassRecord> out;
    out.reserve(classes_.size());
    for (const auto& c : classes_) {
      ClassRecord r{c.id, c.name, {}, c.phrases};
      if (c.parent != kNoParent) r.parents.push_back(classes_[c.parent].id);
      out.push_back(std::move(r));
    }
    return out;
  }

 private:
  void finalize() {
    // BFS from the root assigns levels; anything unreached sits on a cycle.
    std::vector<bool> seen(classes_.size(), false);
    std::deque<std::size_t> queue{root_};
    seen[root_] = true;
    classes_[root_].level = 0;
    depth_ = 0;
    std::size_t reached = 1;
    while (!queue.empty()) {
      const auto u = queue.front();
      queue.pop_front();
      for (auto v : classes_[u].children) {
        if (seen[v]) throw InputError("taxonomy: cycle detected at class '" + classes_[v].id + "'");
        seen[v] = true;
        ++reached;
        classes_[v].level = classes_[u].level + 1;
        depth_ = std::max(depth_, classes_[v].level);
        queue.push_back(v);
      }
    }
    if (reached != classes_.size()) {
      for (std::size_t i = 0; i < classes_.size(); ++i) {
        if (!seen[i]) throw InputError("taxonomy: cycle detected at class '" + classes_[i].id + "'");
      }
    }
    by_level_.assign(static_cast<std::size_t>(depth_) + 1, {});
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      by_level_[static_cast<std::size_t>(classes_[i].level)].push_back(i);
    }
  }

  std::vector<TopicClass> classes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> by_level_;
  std::size_t root_ = 0;
  int depth_ = 0;
};

// ---------------------------------------------------------------------------
// File format: one JSON object per line,
//   {"id": "...", "name": "...", "parent": null | "id" | ["id", ...], "phrases": [...]}

inline TopicTaxonomy parse_taxonomy(std::istream& in, const std::string& source = "taxonomy") {
  std::vector<ClassRecord> records;
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
    ClassRecord r;
    r.id = rec["id"].get<std::string>();
    try {
      if (rec.contains("name") && !rec["name"].is_null()) r.name = rec["name"].get<std::string>();
      if (rec.contains("parent")) {
        const auto& p = rec["parent"];
        if (p.is_string()) {
          r.parents.push_back(p.get<std::string>());
        } else if (p.is_array()) {
          r.parents = p.get<std::vector<std::string>>();
        } else if (!p.is_null()) {
          throw InputError(where + ": class '" + r.id + "' has a malformed parent");
        }
      }
      if (rec.contains("phrases")) r.phrases = rec["phrases"].get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw InputError(where + ": class '" + r.id + "': " + e.what());
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw InputError(source + ": no classes");
  return TopicTaxonomy::from_records(std::move(records));
}

inline TopicTaxonomy load_taxonomy(const std::string& path) {
  auto in = open_input(path);
  return parse_taxonomy(in, path);
}

/// Canonical writer: records sorted by id, fixed field order.
inline void write_taxonomy(std::ostream& out, const TopicTaxonomy& tax) {
  for (const auto& r : tax.records()) {
    ordered_json rec;
    rec["id"] = r.id;
    rec["name"] = r.name;
    rec["parent"] = r.parents.empty() ? ordered_json(nullptr) : ordered_json(r.parents.front());
    rec["phrases"] = r.phrases;
    out << rec.dump() << '\n';
  }
}

inline void save_taxonomy(const TopicTaxonomy& tax, const std::string& path) {
  auto out = open_output(path);
  write_taxonomy(out, tax);
}

// ---------------------------------------------------------------------------
// Traversal.

/// All dense indices in the subtree rooted at `j` (pre-order, j first).
inline std::vector<std::size_t> subtree_members(const TopicTaxonomy& tax, std::size_t j) {
  std::vector<std::size_t> out;
  std::vector<std::size_t> stack{j};
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    out.push_back(u);
    const auto& ch = tax.at(u).children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

/// P^T_j: union of phrases over the subtree rooted at j, sorted and unique.
inline std::vector<std::string> subtree_phrases(const TopicTaxonomy& tax, std::size_t j) {
  std::set<std::string> acc;
  for (auto u : subtree_members(tax, j)) {
    acc.insert(tax.at(u).phrases.begin(), tax.at(u).phrases.end());
  }
  return {acc.begin(), acc.end()};
}

inline std::vector<std::string> subtree_phrases(const TopicTaxonomy& tax, std::string_view id) {
  return subtree_phrases(tax, tax.index_of(id));
}

/// Subtree phrase unions for every class, built bottom-up in one pass.
inline std::vector<std::vector<std::string>> subtree_phrase_table(const TopicTaxonomy& tax) {
  std::vector<std::vector<std::string>> table(tax.size());
  for (int level = tax.depth(); level >= 0; --level) {
    for (auto j : tax.level_members(level)) {
      std::set<std::string> acc(tax.at(j).phrases.begin(), tax.at(j).phrases.end());
      for (auto c : tax.at(j).children) acc.insert(table[c].begin(), table[c].end());
      table[j].assign(acc.begin(), acc.end());
    }
  }
  return table;
}

struct EgoGraph {
  std::size_t center = 0;
  int hops = 0;
  std::vector<std::size_t> nodes;                            // ascending
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child), both in nodes
  std::vector<int> distance;                                 // aligned with nodes
};

/// BFS ball of radius `hops` around `j` over undirected taxonomy edges.
inline EgoGraph ego_graph(const TopicTaxonomy& tax, std::size_t j, int hops) {
  if (j >= tax.size()) throw InputError("ego_graph: unknown class index " + std::to_string(j));
  if (hops < 0) throw InputError("ego_graph: negative hop count");
  std::map<std::size_t, int> dist{{j, 0}};
  std::deque<std::size_t> queue{j};
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    if (dist[u] == hops) continue;
    for (auto v : tax.neighbors(u)) {
      if (dist.emplace(v, dist[u] + 1).second) queue.push_back(v);
    }
  }
  EgoGraph g;
  g.center = j;
  g.hops = hops;
  for (auto [node, d] : dist) {
    g.nodes.push_back(node);
    g.distance.push_back(d);
  }
  for (auto node : g.nodes) {
    const auto p = tax.at(node).parent;
    if (p != kNoParent && dist.count(p)) g.edges.emplace_back(p, node);
  }
  return g;
}

inline EgoGraph ego_graph(const TopicTaxonomy& tax, std::string_view id, int hops) {
  return ego_graph(tax, tax.index_of(id), hops);
}

// ---------------------------------------------------------------------------
// Quality perturbations. Both return new taxonomies; inputs are untouched.

struct PruneResult {
  TopicTaxonomy taxonomy;
  std::vector<std::string> removed;  // sorted ids
  std::size_t target = 0;
  double achieved_ratio = 0.0;
};

/// Removes uniformly chosen non-root subtrees until at least
/// ceil(ratio * |C|) classes are gone (overshoot by at most one subtree).
inline PruneResult prune_random(const TopicTaxonomy& tax, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw InputError("prune_random: ratio must lie in [0, 1)");
  PruneResult res;
  res.target = ceil_count(ratio * static_cast<double>(tax.size()));
  std::vector<bool> removed(tax.size(), false);
  std::size_t removed_count = 0;
  Rng rng(seed);
  while (removed_count < res.target) {
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < tax.size(); ++i) {
      if (i != tax.root() && !removed[i]) alive.push_back(i);
    }
    if (alive.empty()) break;
    const auto pick = alive[rng.below(alive.size())];
    for (auto u : subtree_members(tax, pick)) {
      if (!removed[u]) {
        removed[u] = true;
        ++removed_count;
      }
    }
  }
  std::vector<ClassRecord> kept;
  auto records = tax.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (removed[i]) {
      res.removed.push_back(records[i].id);
    } else {
      kept.push_back(std::move(records[i]));
    }
  }
  res.taxonomy = TopicTaxonomy::from_records(std::move(kept));
  res.achieved_ratio = static_cast<double>(removed_count) / static_cast<double>(tax.size());
  return res;
}

struct ShuffleResult {
  TopicTaxonomy taxonomy;
  std::vector<std::pair<std::string, std::string>> swapped;
};

/// Picks ceil(ratio * n_level) classes at `level` (rounded down to an even
/// count), pairs them at random and exchanges each pair's parents. Each moved
/// class keeps its subtree.
inline ShuffleResult shuffle_level(const TopicTaxonomy& tax, double ratio, std::uint64_t seed, int level) {
  if (level < 1) throw InputError("shuffle_level: level must be >= 1");
  if (level > tax.depth()) {
    throw InputError("shuffle_level: level " + std::to_string(level) + " exceeds depth " +
                     std::to_string(tax.depth()));
  }
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("shuffle_level: ratio must lie in [0, 1]");
  std::vector<std::size_t> members = tax.level_members(level);
  std::size_t count = std::min(members.size(), ceil_count(ratio * static_cast<double>(members.size())));
  count -= count % 2;
  Rng rng(seed);
  rng.shuffle(members);

  auto records = tax.records();
  ShuffleResult res;
  for (std::size_t i = 0; i + 1 < count; i += 2) {
    auto& a = records[members[i]];
    auto& b = records[members[i + 1]];
    std::swap(a.parents, b.parents);
    res.swapped.emplace_back(a.id, b.id);
  }
  res.taxonomy = TopicTaxonomy::from_records(std::move(records));
  return res;
}

}  // namespace toter
