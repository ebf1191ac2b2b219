#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "toter/taxonomy.hpp"
#include "toter/util.hpp"

namespace toter::testing {

inline std::string node_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "n" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

/// Random tree of `n` nodes: node i > 0 hangs under a uniformly chosen
/// earlier node. Phrases are drawn from a small shared pool so unions overlap.
inline std::vector<ClassRecord> random_tree_records(Rng& rng, std::size_t n, std::size_t pool = 40) {
  std::vector<ClassRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ClassRecord r;
    r.id = node_id(i);
    r.name = "name " + r.id;
    r.phrases.push_back(r.name);
    const std::size_t extra = 1 + rng.below(3);
    for (std::size_t k = 0; k < extra; ++k) r.phrases.push_back("p" + std::to_string(rng.below(pool)));
    if (i > 0) r.parents.push_back(node_id(rng.below(i)));
    out.push_back(std::move(r));
  }
  return out;
}

inline TopicTaxonomy random_tree(Rng& rng, std::size_t n, std::size_t pool = 40) {
  return TopicTaxonomy::from_records(random_tree_records(rng, n, pool));
}

/// Random tree with exactly `depth` levels below the root and 1..max_fanout
/// children per internal node.
inline TopicTaxonomy random_layered_tree(Rng& rng, int depth, std::size_t max_fanout) {
  std::vector<ClassRecord> recs;
  std::size_t counter = 0;
  recs.push_back({node_id(counter++), "", {}, {}});
  std::vector<std::size_t> frontier{0};
  for (int level = 1; level <= depth; ++level) {
    std::vector<std::size_t> next;
    for (auto p : frontier) {
      const std::size_t fan = 1 + rng.below(max_fanout);
      for (std::size_t c = 0; c < fan; ++c) {
        recs.push_back({node_id(counter++), "", {recs[p].id}, {}});
        next.push_back(recs.size() - 1);
      }
    }
    frontier = std::move(next);
  }
  for (auto& r : recs) {
    r.name = "topic " + r.id;
    r.phrases = {r.name, r.name + " alt"};
  }
  return TopicTaxonomy::from_records(std::move(recs));
}

/// Independent structural check: one root, parent/child lists agree, every
/// node reaches the root, levels are parent level + 1.
inline bool is_valid_tree(const TopicTaxonomy& tax) {
  std::size_t roots = 0;
  for (std::size_t i = 0; i < tax.size(); ++i) {
    const auto& c = tax.at(i);
    if (c.parent == kNoParent) {
      ++roots;
      if (c.level != 0) return false;
      continue;
    }
    const auto& p = tax.at(c.parent);
    if (c.level != p.level + 1) return false;
    if (std::count(p.children.begin(), p.children.end(), i) != 1) return false;
    std::size_t hops = 0;
    for (std::size_t u = i; tax.at(u).parent != kNoParent; u = tax.at(u).parent) {
      if (++hops > tax.size()) return false;
    }
    if (std::find(c.phrases.begin(), c.phrases.end(), c.name) == c.phrases.end()) return false;
  }
  return roots == 1;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("toter_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    std::ofstream out(file(name), std::ios::binary);
    out << content;
    return file(name);
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Silences structured logging for the lifetime of the test binary.
struct QuietLogs {
  QuietLogs() { Log::set_stream(nullptr); }
};
inline QuietLogs quiet_logs_instance;

}  // namespace toter::testing
